//! Bayes BH on posterior probabilities, BH on p-values, and outcome counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm_signal::BinarySignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub reject: Vec<bool>,
    /// Number of rejections `R`.
    pub rejections: usize,
    /// Posterior floor (Bayes BH) or p-value ceiling (BH) of the rejected set.
    pub threshold: Option<f64>,
}

impl TestDecision {
    fn from_order(m: usize, order: &[usize], r: usize, threshold: Option<f64>) -> Self {
        let mut reject = vec![false; m];
        for &j in &order[..r] {
            reject[j] = true;
        }
        TestDecision {
            reject,
            rejections: r,
            threshold,
        }
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "level must lie in (0, 1), got {alpha}"
        )))
    }
}

fn check_unit(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain(format!("no {what} given")));
    }
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::domain(format!(
            "{what} must lie in [0, 1], found {v}"
        ))),
        None => Ok(()),
    }
}

/// Bayes BH: with posteriors sorted in decreasing order, `R` is the largest
/// `k` whose running mean of the top `k` values is at least `1 - alpha`.
/// Exactly the `R` largest posteriors are rejected; equal values keep their
/// input order.
pub fn bayes_bh(probs: &[f64], alpha: f64) -> Result<TestDecision> {
    check_unit(probs, "posterior probabilities")?;
    check_level(alpha)?;
    let m = probs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let target = 1.0 - alpha;
    let mut sum = 0.0;
    let mut r = 0;
    for (k, &j) in order.iter().enumerate() {
        sum += probs[j];
        if sum / (k + 1) as f64 >= target {
            r = k + 1;
        }
    }
    let threshold = (r > 0).then(|| probs[order[r - 1]]);
    Ok(TestDecision::from_order(m, &order, r, threshold))
}

/// BH step-up: `R = max{k : p_(k) <= k alpha / m}`; every `p_j <= p_(R)` is
/// rejected.
pub fn bh(p: &[f64], alpha: f64) -> Result<TestDecision> {
    check_unit(p, "p-values")?;
    check_level(alpha)?;
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let r = order
        .iter()
        .enumerate()
        .rev()
        .find(|(k, &j)| p[j] <= (k + 1) as f64 * alpha / m as f64)
        .map_or(0, |(k, _)| k + 1);
    let threshold = (r > 0).then(|| p[order[r - 1]]);
    Ok(TestDecision::from_order(m, &order, r, threshold))
}

/// Upper tail of the standard normal, `1 - Phi(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// One-sided p-values for `H_t: X_t ~ N(0, 1)` against a positive shift.
pub fn p_values_one_sided(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| normal_sf(v)).collect()
}

const LEVEL_CAP: f64 = 1.0 - 1e-12;

/// `alpha / (1 - psi)` where `psi` is the realized proportion of ones in
/// `eta`, capped below 1.
pub fn augmented_alpha(eta: &BinarySignal, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let psi = eta.proportion();
    if psi >= 1.0 {
        return Err(Error::Degenerate("every hypothesis is a false null".into()));
    }
    Ok((alpha / (1.0 - psi)).min(LEVEL_CAP))
}

/// Outcome table of one testing instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// True nulls accepted.
    pub u: usize,
    /// False discoveries.
    pub v: usize,
    /// False nulls accepted.
    pub t: usize,
    /// True discoveries.
    pub s: usize,
    pub r: usize,
    pub a: usize,
    pub m0: usize,
    pub m1: usize,
}

impl ConfusionCounts {
    /// `V / max(R, 1)`.
    pub fn fdp(&self) -> f64 {
        self.v as f64 / self.r.max(1) as f64
    }

    /// Number of true discoveries.
    pub fn ntd(&self) -> usize {
        self.s
    }
}

pub fn confusion(decision: &TestDecision, truth: &BinarySignal) -> Result<ConfusionCounts> {
    if decision.reject.len() != truth.len() {
        return Err(Error::domain(format!(
            "decision covers {} hypotheses but truth has {}",
            decision.reject.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts {
        u: 0,
        v: 0,
        t: 0,
        s: 0,
        r: 0,
        a: 0,
        m0: 0,
        m1: 0,
    };
    for (&rej, &bit) in decision.reject.iter().zip(truth.bits()) {
        match (bit, rej) {
            (0, false) => c.u += 1,
            (0, true) => c.v += 1,
            (_, false) => c.t += 1,
            (_, true) => c.s += 1,
        }
    }
    c.m0 = c.u + c.v;
    c.m1 = c.t + c.s;
    c.r = c.v + c.s;
    c.a = c.u + c.t;
    Ok(c)
}
