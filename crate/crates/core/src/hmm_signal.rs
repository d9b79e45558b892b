//! Parent Markov chain simulation, binary projection and windowed moments.
//!
//! The hypothesis indicator `eta_t` is the image of a parent chain state under
//! a map sending the null states to 0 and all other states to 1. Moments of
//! `eta` conditional on `eta_t = i` are tabulated by offset within a half
//! window `w`; the tables are translation invariant, so one table serves
//! every site.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_ensembles::{state_mask, ProbVector, TransitionMatrix};

/// Parent chain: stationary start `pi`, transitions `p`, and the null states.
#[derive(Debug, Clone)]
pub struct ParentChainSpec {
    pi: ProbVector,
    p: TransitionMatrix,
    null_mask: Vec<bool>,
    psig: f64,
}

impl ParentChainSpec {
    /// `null_states` are 0-based and map to `eta = 0`. The proportion of
    /// false nulls is the `pi` mass outside them.
    pub fn new(pi: ProbVector, p: TransitionMatrix, null_states: &[usize]) -> Result<Self> {
        if pi.dim() != p.dim() {
            return Err(Error::domain(format!(
                "pi has dimension {} but P is {}x{}",
                pi.dim(),
                p.dim(),
                p.dim()
            )));
        }
        let null_mask = state_mask(pi.dim(), null_states)?;
        let psig = pi
            .as_slice()
            .iter()
            .zip(&null_mask)
            .filter(|(_, &n)| !n)
            .map(|(p, _)| p)
            .sum();
        Ok(ParentChainSpec {
            pi,
            p,
            null_mask,
            psig,
        })
    }

    pub fn dim(&self) -> usize {
        self.pi.dim()
    }

    pub fn pi(&self) -> &ProbVector {
        &self.pi
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.p
    }

    pub fn null_mask(&self) -> &[bool] {
        &self.null_mask
    }

    pub fn null_states(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&s| self.null_mask[s]).collect()
    }

    /// Stationary proportion of false nulls, `P(eta_t = 1)`.
    pub fn psig(&self) -> f64 {
        self.psig
    }

    /// `tau(s)`: 0 for null states, 1 otherwise.
    pub fn tau(&self, state: usize) -> u8 {
        u8::from(!self.null_mask[state])
    }
}

/// A 0/1 sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BinarySignal(Vec<u8>);

impl BinarySignal {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::domain("signal must be nonempty"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::domain(format!(
                "signal entries must be 0 or 1, found {b}"
            )));
        }
        Ok(BinarySignal(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    /// Fraction of ones.
    pub fn proportion(&self) -> f64 {
        self.count_ones() as f64 / self.len() as f64
    }
}

impl TryFrom<Vec<u8>> for BinarySignal {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        BinarySignal::new(v)
    }
}

impl From<BinarySignal> for Vec<u8> {
    fn from(s: BinarySignal) -> Self {
        s.0
    }
}

fn cumulative_rows(p: &TransitionMatrix) -> Vec<Vec<f64>> {
    p.entries()
        .row_iter()
        .map(|r| {
            let mut acc = 0.0;
            r.iter()
                .map(|&x| {
                    acc += x;
                    acc
                })
                .collect()
        })
        .collect()
}

fn draw(cum: &[f64], u: f64) -> usize {
    // The last bucket absorbs rounding in the final cumulative sum.
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

/// Simulates `m` states with `M_1 ~ pi` and `M_{t+1} | M_t = s ~ P[s, .]`.
pub fn simulate_chain<R: Rng + ?Sized>(
    spec: &ParentChainSpec,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::domain("chain length must be at least 1"));
    }
    let start_cum: Vec<f64> = {
        let mut acc = 0.0;
        spec.pi
            .as_slice()
            .iter()
            .map(|&x| {
                acc += x;
                acc
            })
            .collect()
    };
    let start = draw(&start_cum, rng.random());
    simulate_chain_from(spec, m, start, rng)
}

/// Same as [`simulate_chain`] with a fixed initial state.
pub fn simulate_chain_from<R: Rng + ?Sized>(
    spec: &ParentChainSpec,
    m: usize,
    start: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if start >= spec.dim() {
        return Err(Error::domain(format!("start state {start} out of range")));
    }
    let cum = cumulative_rows(&spec.p);
    let mut states = Vec::with_capacity(m);
    let mut s = start;
    states.push(s);
    for _ in 1..m {
        s = draw(&cum[s], rng.random());
        states.push(s);
    }
    Ok(states)
}

/// `eta_t = 0` iff `states[t]` is a null state.
pub fn project(states: &[usize], null_mask: &[bool]) -> Result<BinarySignal> {
    let bits = states
        .iter()
        .map(|&s| {
            null_mask
                .get(s)
                .map(|&null| u8::from(!null))
                .ok_or_else(|| Error::domain(format!("state {s} out of range")))
        })
        .collect::<Result<Vec<u8>>>()?;
    BinarySignal::new(bits)
}

/// Simulates a chain and projects it in one step.
pub fn simulate_signal<R: Rng + ?Sized>(
    spec: &ParentChainSpec,
    m: usize,
    rng: &mut R,
) -> Result<BinarySignal> {
    project(&simulate_chain(spec, m, rng)?, spec.null_mask())
}

/// Conditional moment tables of a stationary binary signal by offset.
///
/// `mu(i, d)` is `E(eta_{t+d} | eta_t = i)` and `joint(i, a, b)` is
/// `E(eta_{t+a} eta_{t+b} | eta_t = i)` for offsets in `[-w, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedMoments {
    w: usize,
    psig_hat: f64,
    /// Packed upper triangle over offset pairs `a <= b`, one table per `i`.
    joint: [Vec<f64>; 2],
}

impl WindowedMoments {
    pub fn w(&self) -> usize {
        self.w
    }

    /// Marginal `P(eta_t = 1)`.
    pub fn psig_hat(&self) -> f64 {
        self.psig_hat
    }

    fn width(&self) -> usize {
        2 * self.w + 1
    }

    fn pair_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let l = self.width();
        a * l - a * (a + 1) / 2 + b
    }

    fn slot(&self, offset: isize) -> usize {
        let w = self.w as isize;
        assert!(offset.abs() <= w, "offset {offset} outside half window {w}");
        (offset + w) as usize
    }

    pub fn mu(&self, i: u8, offset: isize) -> f64 {
        let k = self.slot(offset);
        self.joint[i as usize][self.pair_index(k, k)]
    }

    pub fn joint(&self, i: u8, a: isize, b: isize) -> f64 {
        let (ka, kb) = (self.slot(a), self.slot(b));
        self.joint[i as usize][self.pair_index(ka, kb)]
    }

    pub fn cov(&self, i: u8, a: isize, b: isize) -> f64 {
        self.joint(i, a, b) - self.mu(i, a) * self.mu(i, b)
    }

    pub fn offsets(&self) -> impl Iterator<Item = isize> {
        let w = self.w as isize;
        -w..=w
    }

    fn from_fn(
        w: usize,
        psig_hat: f64,
        mut f: impl FnMut(u8, usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let l = 2 * w + 1;
        let mut joint = [
            Vec::with_capacity(l * (l + 1) / 2),
            Vec::with_capacity(l * (l + 1) / 2),
        ];
        for (i, table) in joint.iter_mut().enumerate() {
            for a in 0..l {
                for b in a..l {
                    table.push(f(i as u8, a, b)?);
                }
            }
        }
        Ok(WindowedMoments { w, psig_hat, joint })
    }

    /// The windowed slice of conditional means and second moments around
    /// site `t` of a length-`m` sequence. Offsets falling outside `[0, m)`
    /// are dropped.
    pub fn slice_at(&self, t: usize, m: usize) -> WindowSlice {
        let w = self.w as isize;
        let offsets: Vec<isize> = (-w..=w)
            .filter(|&d| {
                let s = t as isize + d;
                s >= 0 && s < m as isize
            })
            .collect();
        let sites = offsets.iter().map(|&d| (t as isize + d) as usize).collect();
        let n = offsets.len();
        let mean =
            [0u8, 1].map(|i| DVector::from_iterator(n, offsets.iter().map(|&d| self.mu(i, d))));
        let second =
            [0u8, 1].map(|i| DMatrix::from_fn(n, n, |r, c| self.joint(i, offsets[r], offsets[c])));
        WindowSlice {
            sites,
            offsets,
            mean,
            second,
        }
    }
}

/// Conditional moment vectors restricted to the window around one site.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlice {
    /// Absolute site indices covered by the window.
    pub sites: Vec<usize>,
    pub offsets: Vec<isize>,
    /// `E(eta_s | eta_t = i)` over `sites`.
    pub mean: [DVector<f64>; 2],
    /// `E(eta_s eta_u | eta_t = i)` over `sites x sites`.
    pub second: [DMatrix<f64>; 2],
}

impl WindowSlice {
    /// `Cov(eta | eta_t = i) = J_i - mean_i mean_i'`.
    pub fn cov(&self, i: usize) -> DMatrix<f64> {
        &self.second[i] - &self.mean[i] * self.mean[i].transpose()
    }
}

/// Shorthand for [`WindowedMoments::slice_at`].
pub fn moment_vectors_at(moments: &WindowedMoments, t: usize, m: usize) -> WindowSlice {
    moments.slice_at(t, m)
}

/// Empirical conditional moments from a noiseless training signal.
///
/// Ratios count only sites `t` for which every offset involved lies inside
/// the sequence.
pub fn estimate_moments(theta: &BinarySignal, w: usize) -> Result<WindowedMoments> {
    let bits = theta.bits();
    let m = bits.len();
    if m <= 2 * w + 1 {
        return Err(Error::Estimation(format!(
            "signal length {m} must exceed 2w + 1 = {}",
            2 * w + 1
        )));
    }
    let ones = theta.count_ones();
    if ones == 0 || ones == m {
        return Err(Error::Estimation(
            "training signal must contain both zeros and ones".into(),
        ));
    }
    let l = 2 * w + 1;
    let pairs = l * (l + 1) / 2;
    let mut num = [vec![0u64; pairs], vec![0u64; pairs]];
    let mut den = [vec![0u64; pairs], vec![0u64; pairs]];
    for t in 0..m {
        let i = bits[t] as usize;
        let lo = w.saturating_sub(t);
        let hi = (m - 1 - t + w).min(l - 1);
        for a in lo..=hi {
            let ba = bits[t + a - w];
            let row = a * l - a * (a + 1) / 2;
            for b in a..=hi {
                den[i][row + b] += 1;
                if ba == 1 && bits[t + b - w] == 1 {
                    num[i][row + b] += 1;
                }
            }
        }
    }
    let psig_hat = ones as f64 / m as f64;
    WindowedMoments::from_fn(w, psig_hat, |i, a, b| {
        let k = a * l - a * (a + 1) / 2 + b;
        let (n, d) = (num[i as usize][k], den[i as usize][k]);
        if d == 0 {
            return Err(Error::Estimation(format!(
                "no sites with eta_t = {i} for offsets ({}, {})",
                a as isize - w as isize,
                b as isize - w as isize
            )));
        }
        Ok(n as f64 / d as f64)
    })
}

/// Probability that a stationary chain started from `pi` visits the given
/// state sets at the given relative times. Entries sharing a time intersect.
fn joint_visit_probability(spec: &ParentChainSpec, mut events: Vec<(isize, Vec<bool>)>) -> f64 {
    events.sort_by_key(|e| e.0);
    let mut merged: Vec<(isize, Vec<bool>)> = Vec::new();
    for (t, mask) in events {
        match merged.last_mut() {
            Some((lt, lm)) if *lt == t => lm.iter_mut().zip(&mask).for_each(|(x, &y)| *x &= y),
            _ => merged.push((t, mask)),
        }
    }
    let p = spec.p.entries();
    let mut v = DVector::from_iterator(
        spec.dim(),
        spec.pi
            .as_slice()
            .iter()
            .zip(&merged[0].1)
            .map(|(&x, &k)| if k { x } else { 0.0 }),
    );
    for win in merged.windows(2) {
        let gap = (win[1].0 - win[0].0) as usize;
        for _ in 0..gap {
            v = p.tr_mul(&v);
        }
        for (x, &k) in v.iter_mut().zip(&win[1].1) {
            if !k {
                *x = 0.0;
            }
        }
    }
    v.sum()
}

/// Exact conditional moment tables of `tau(M)` for a stationary parent chain.
///
/// Assumes `pi' P = pi'`; the marginal used is the `pi` mass off the null set.
pub fn analytic_moments(spec: &ParentChainSpec, w: usize) -> Result<WindowedMoments> {
    let null = spec.null_mask.clone();
    let alt: Vec<bool> = null.iter().map(|b| !b).collect();
    let class = [null, alt.clone()];
    let marg = [1.0 - spec.psig, spec.psig];
    WindowedMoments::from_fn(w, spec.psig, |i, a, b| {
        let (da, db) = (a as isize - w as isize, b as isize - w as isize);
        let events = vec![
            (0, class[i as usize].clone()),
            (da, alt.clone()),
            (db, alt.clone()),
        ];
        Ok(joint_visit_probability(spec, events) / marg[i as usize])
    })
}
