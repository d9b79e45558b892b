//! Random transition matrices with a prescribed stationary distribution.
//!
//! A matrix is drawn from the Dirichlet Markov ensemble, balanced by Sinkhorn
//! scaling so that both margins equal `pi`, and turned into a transition matrix
//! `P = diag(pi)^-1 A`, which then satisfies `pi' P = pi'`. Lower bounds on the
//! second and third largest eigenvalue moduli are enforced by rejection.
//!
//! States are indexed from 0 throughout the library.

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const ROW_TOL: f64 = 1e-10;
const STATIONARY_TOL: f64 = 1e-8;

/// A strictly positive probability vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("probability vector must be nonempty"));
        }
        if let Some(bad) = entries.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::domain(format!(
                "probability vector entries must be strictly positive, found {bad}"
            )));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!(
                "probability vector sums to {total}, not 1"
            )));
        }
        Ok(ProbVector(entries))
    }

    /// Rescales positive weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain("weights must have a positive finite sum"));
        }
        ProbVector::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(d: usize) -> Result<Self> {
        ProbVector::normalized(vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(de)?;
        ProbVector::normalized(v).map_err(serde::de::Error::custom)
    }
}

/// Row-stochastic square matrix, optionally carrying its stationary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
    stationary: Option<ProbVector>,
}

impl TransitionMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::domain(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(bad) = entries.iter().find(|&&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::domain(format!("negative or non-finite entry {bad}")));
        }
        for (i, row) in entries.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(TransitionMatrix {
            entries,
            stationary: None,
        })
    }

    /// Builds from nonnegative rows, dividing each row by its sum.
    pub fn from_rows_normalized(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain(
                "transition matrix rows must all have length d",
            ));
        }
        let mut m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            if !(s > 0.0) {
                return Err(Error::domain("row with zero total mass"));
            }
            row /= s;
        }
        TransitionMatrix::new(m)
    }

    /// The rank-one matrix `1 pi'`, whose rows all equal `pi`.
    pub fn rank_one(pi: &ProbVector) -> Self {
        let d = pi.dim();
        let p = pi.as_slice();
        TransitionMatrix {
            entries: DMatrix::from_fn(d, d, |_, j| p[j]),
            stationary: Some(pi.clone()),
        }
    }

    /// Attaches `pi` after checking `|pi' P - pi'|_inf <= 1e-8`.
    pub fn with_stationary(mut self, pi: ProbVector) -> Result<Self> {
        let dev = stationarity_defect(&self, &pi)?;
        if dev > STATIONARY_TOL {
            return Err(Error::domain(format!(
                "pi is not stationary for P (max deviation {dev:.3e})"
            )));
        }
        self.stationary = Some(pi);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn stationary(&self) -> Option<&ProbVector> {
        self.stationary.as_ref()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[(from, to)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// `|pi' P - pi'|_inf`.
pub fn stationarity_defect(p: &TransitionMatrix, pi: &ProbVector) -> Result<f64> {
    if p.dim() != pi.dim() {
        return Err(Error::domain("dimension mismatch between P and pi"));
    }
    let v = p.entries.tr_mul(&pi.to_dvector());
    Ok(v.iter()
        .zip(pi.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Eigenvalue moduli of a transition matrix, sorted in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub moduli: Vec<f64>,
    /// Second largest eigenvalue modulus.
    pub slem: f64,
    /// Third largest eigenvalue modulus (0 when `d < 3`).
    pub tlem: f64,
}

pub fn eigenmoduli(p: &TransitionMatrix) -> Result<SpectralSummary> {
    spectrum_of(p.entries())
}

/// Eigenvalue moduli of any square real matrix via a real Schur decomposition.
pub fn spectrum_of(m: &DMatrix<f64>) -> Result<SpectralSummary> {
    if m.nrows() != m.ncols() {
        return Err(Error::domain("eigenvalues need a square matrix"));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let mut moduli: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let slem = moduli.get(1).copied().unwrap_or(0.0);
    let tlem = moduli.get(2).copied().unwrap_or(0.0);
    Ok(SpectralSummary { moduli, slem, tlem })
}

/// Draws `pi` with mass `1 - psig` on `null_states` and `psig` on the rest.
///
/// One uniform draw `zeta_s` is taken per state in index order; within each
/// block the draws are normalized to the block's mass.
pub fn sample_stationary_vector<R: Rng + ?Sized>(
    d: usize,
    null_states: &[usize],
    psig: f64,
    rng: &mut R,
) -> Result<ProbVector> {
    let mask = state_mask(d, null_states)?;
    if !(psig > 0.0 && psig < 1.0) {
        return Err(Error::domain(format!(
            "psig must lie in (0, 1), got {psig}"
        )));
    }
    let zeta: Vec<f64> = (0..d).map(|_| open_unit(rng)).collect();
    Ok(ProbVector(split_mass(&zeta, &mask, psig)))
}

/// Normalizes `zeta` blockwise: null states share `1 - psig`, the others `psig`.
pub(crate) fn split_mass(zeta: &[f64], null_mask: &[bool], psig: f64) -> Vec<f64> {
    let null_total: f64 = zeta
        .iter()
        .zip(null_mask)
        .filter(|(_, &n)| n)
        .map(|(z, _)| z)
        .sum();
    let alt_total: f64 = zeta
        .iter()
        .zip(null_mask)
        .filter(|(_, &n)| !n)
        .map(|(z, _)| z)
        .sum();
    zeta.iter()
        .zip(null_mask)
        .map(|(&z, &n)| {
            if n {
                (1.0 - psig) * z / null_total
            } else {
                psig * z / alt_total
            }
        })
        .collect()
}

/// Validates a null-state set and returns its membership mask.
pub fn state_mask(d: usize, null_states: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; d];
    for &s in null_states {
        if s >= d {
            return Err(Error::domain(format!("state {s} out of range for d = {d}")));
        }
        mask[s] = true;
    }
    let k = mask.iter().filter(|&&b| b).count();
    if k == 0 || k == d {
        return Err(Error::domain(
            "null state set must be a nonempty strict subset of the states",
        ));
    }
    Ok(mask)
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Uniform draw from the Dirichlet Markov ensemble: rows are independent
/// normalized vectors of standard exponentials.
pub fn sample_dirichlet_transition<R: Rng + ?Sized>(
    d: usize,
    rng: &mut R,
) -> Result<TransitionMatrix> {
    if d < 2 {
        return Err(Error::domain(format!("need d >= 2, got {d}")));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let xi: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = xi.iter().sum();
        for (j, x) in xi.into_iter().enumerate() {
            m[(i, j)] = x / total;
        }
    }
    Ok(TransitionMatrix {
        entries: m,
        stationary: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Euclidean tolerance on both margin residuals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Balanced {
    pub matrix: DMatrix<f64>,
    pub sweeps: usize,
    /// `(row, column)` residuals before the first sweep and after each sweep.
    pub residuals: Vec<(f64, f64)>,
}

impl Balanced {
    pub fn final_residuals(&self) -> (f64, f64) {
        *self
            .residuals
            .last()
            .expect("residual trace is never empty")
    }
}

/// Margin residuals `(|A 1 - pi|_2, |1'A - pi'|_2)`.
pub fn margin_residuals(a: &DMatrix<f64>, pi: &[f64]) -> (f64, f64) {
    let row: f64 = a
        .row_iter()
        .zip(pi)
        .map(|(r, p)| (r.sum() - p).powi(2))
        .sum::<f64>()
        .sqrt();
    let col: f64 = a
        .column_iter()
        .zip(pi)
        .map(|(c, p)| (c.sum() - p).powi(2))
        .sum::<f64>()
        .sqrt();
    (row, col)
}

/// Alternating row and column scaling until both margins are within `tol` of `pi`.
pub fn sinkhorn_balance(
    a: &DMatrix<f64>,
    pi: &ProbVector,
    opts: SinkhornOptions,
) -> Result<Balanced> {
    let d = pi.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::domain(format!(
            "matrix is {}x{} but pi has dimension {d}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(bad) = a.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::domain(format!(
            "Sinkhorn input must be strictly positive, found {bad}"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let target = pi.as_slice();
    let mut a = a.clone();
    let mut residuals = vec![margin_residuals(&a, target)];
    let mut sweeps = 0;
    loop {
        let (row, col) = *residuals.last().unwrap();
        if row <= opts.tol && col <= opts.tol {
            break;
        }
        if sweeps == opts.max_iter {
            return Err(Error::Convergence {
                iterations: sweeps,
                row_residual: row,
                col_residual: col,
            });
        }
        for (mut r, &p) in a.row_iter_mut().zip(target) {
            let s = r.sum();
            r *= p / s;
        }
        for (mut c, &p) in a.column_iter_mut().zip(target) {
            let s = c.sum();
            c *= p / s;
        }
        sweeps += 1;
        residuals.push(margin_residuals(&a, target));
    }
    Ok(Balanced {
        matrix: a,
        sweeps,
        residuals,
    })
}

/// `P = diag(pi)^-1 A` for a balanced `A`.
///
/// Row `s` is divided by its realized sum, which equals `pi_s` up to the
/// balancing tolerance, so `P` is stochastic to rounding error.
pub fn to_transition(a: &DMatrix<f64>, pi: &ProbVector) -> Result<TransitionMatrix> {
    let d = pi.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::domain("dimension mismatch between A and pi"));
    }
    let mut p = a.clone();
    for (i, (mut r, &target)) in p.row_iter_mut().zip(pi.as_slice()).enumerate() {
        let s = r.sum();
        if (s - target).abs() > 1e-6 * target.max(1e-3) {
            return Err(Error::domain(format!(
                "row {i} of A sums to {s}, expected {target}; balance A first"
            )));
        }
        r /= s;
    }
    TransitionMatrix::new(p)?.with_stationary(pi.clone())
}

/// Sinkhorn sampler: one ensemble draw balanced to `pi`.
pub fn sample_balanced_transition<R: Rng + ?Sized>(
    pi: &ProbVector,
    opts: SinkhornOptions,
    rng: &mut R,
) -> Result<TransitionMatrix> {
    let a = sample_dirichlet_transition(pi.dim(), rng)?;
    let balanced = sinkhorn_balance(a.entries(), pi, opts)?;
    to_transition(&balanced.matrix, pi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    /// Lower bound on the slem, in `[0, 1)`.
    pub lambda: f64,
    /// Lower bound on the tlem, in `[0, lambda)`.
    pub mu: f64,
}

impl SpectralBounds {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::domain(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        if lambda == 0.0 {
            if mu != 0.0 {
                return Err(Error::domain("mu must be 0 when lambda is 0"));
            }
        } else if !(mu >= 0.0 && mu < lambda) {
            return Err(Error::domain(format!(
                "mu must lie in [0, lambda), got mu = {mu}, lambda = {lambda}"
            )));
        }
        Ok(SpectralBounds { lambda, mu })
    }

    pub fn accepts(&self, s: &SpectralSummary) -> bool {
        s.slem >= self.lambda && (self.mu == 0.0 || s.tlem >= self.mu)
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedSample {
    pub matrix: TransitionMatrix,
    pub spectrum: SpectralSummary,
    /// Number of Sinkhorn draws taken (0 for the rank-one case).
    pub attempts: usize,
}

/// Redraws Sinkhorn-balanced matrices, keeping `pi` fixed, until the slem and
/// tlem bounds hold. `lambda = 0` yields `1 pi'` directly.
pub fn sample_constrained_transition<R: Rng + ?Sized>(
    pi: &ProbVector,
    bounds: SpectralBounds,
    opts: SinkhornOptions,
    max_attempts: usize,
    rng: &mut R,
) -> Result<ConstrainedSample> {
    if bounds.lambda == 0.0 {
        let matrix = TransitionMatrix::rank_one(pi);
        let spectrum = eigenmoduli(&matrix)?;
        return Ok(ConstrainedSample {
            matrix,
            spectrum,
            attempts: 0,
        });
    }
    let (mut best_slem, mut best_tlem) = (0.0f64, 0.0f64);
    for attempt in 1..=max_attempts {
        let matrix = sample_balanced_transition(pi, opts, rng)?;
        let spectrum = eigenmoduli(&matrix)?;
        if bounds.accepts(&spectrum) {
            return Ok(ConstrainedSample {
                matrix,
                spectrum,
                attempts: attempt,
            });
        }
        if spectrum.slem > best_slem || (spectrum.slem == best_slem && spectrum.tlem > best_tlem) {
            best_slem = spectrum.slem;
            best_tlem = spectrum.tlem;
        }
    }
    Err(Error::SamplingBudget {
        attempts: max_attempts,
        best_slem,
        best_tlem,
    })
}
