//! Second-order expansion of per-site conditional log-likelihood ratios.
//!
//! With `rho(x | eta) = exp(q(x, eps * eta))`, the log ratio
//! `r_t = ln P(eta_t = 1 | X) / P(eta_t = 0 | X)` is approximated by
//!
//! ```text
//! r_t ~ ln odds + gamma' dE eps + 1/2 [E_1(eta' H eta) - E_0(eta' H eta)] eps^2
//!               + 1/2 gamma' dCov gamma eps^2
//! ```
//!
//! where `gamma` and `H` are the gradient and Hessian of `q` at zero and
//! `dE`, `dCov` are differences of the moments of `eta` conditional on
//! `eta_t = 1` versus `eta_t = 0`. For noise acting site by site `H` is
//! diagonal and only windowed conditional moments are needed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm_signal::{WindowSlice, WindowedMoments};

/// Log-density `h` of the noise with its first two derivatives.
pub trait LogDensity {
    fn h(&self, z: f64) -> f64;
    fn h1(&self, z: f64) -> f64;
    fn h2(&self, z: f64) -> f64;
}

impl<D: LogDensity + ?Sized> LogDensity for &D {
    fn h(&self, z: f64) -> f64 {
        (**self).h(z)
    }
    fn h1(&self, z: f64) -> f64 {
        (**self).h1(z)
    }
    fn h2(&self, z: f64) -> f64 {
        (**self).h2(z)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StandardGaussian;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl LogDensity for StandardGaussian {
    fn h(&self, z: f64) -> f64 {
        -0.5 * z * z - LN_SQRT_2PI
    }
    fn h1(&self, z: f64) -> f64 {
        -z
    }
    fn h2(&self, _z: f64) -> f64 {
        -1.0
    }
}

/// Standard logistic density `e^-z / (1 + e^-z)^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StandardLogistic;

impl LogDensity for StandardLogistic {
    fn h(&self, z: f64) -> f64 {
        let a = z.abs();
        -a - 2.0 * (-a).exp().ln_1p()
    }
    fn h1(&self, z: f64) -> f64 {
        -(0.5 * z).tanh()
    }
    fn h2(&self, z: f64) -> f64 {
        let c = (0.5 * z).cosh();
        -0.5 / (c * c)
    }
}

/// How the signal `u = eps * eta_t` enters the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// `X_t = u + Z_t`.
    Additive,
    /// `X_t = Z_t * exp(-u)`.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<D = StandardGaussian> {
    pub interaction: Interaction,
    pub density: D,
}

impl NoiseModel<StandardGaussian> {
    pub fn gaussian_additive() -> Self {
        NoiseModel {
            interaction: Interaction::Additive,
            density: StandardGaussian,
        }
    }
}

impl<D: LogDensity> NoiseModel<D> {
    pub fn new(interaction: Interaction, density: D) -> Self {
        NoiseModel {
            interaction,
            density,
        }
    }

    /// Per-site log-likelihood `q_t(x, u)` of observing `x` under signal `u`.
    pub fn log_emission(&self, x: f64, u: f64) -> f64 {
        match self.interaction {
            Interaction::Additive => self.density.h(x - u),
            Interaction::Multiplicative => u + self.density.h(x * u.exp()),
        }
    }

    /// Observation produced by signal `u` and noise draw `z`.
    pub fn observe(&self, u: f64, z: f64) -> f64 {
        match self.interaction {
            Interaction::Additive => u + z,
            Interaction::Multiplicative => z * (-u).exp(),
        }
    }

    /// First and second derivatives of `q_t(x, .)` at zero.
    pub fn gamma_k(&self, x: f64) -> (f64, f64) {
        match self.interaction {
            Interaction::Additive => (-self.density.h1(x), self.density.h2(x)),
            Interaction::Multiplicative => multiplicative_gamma_k(&self.density, x),
        }
    }
}

/// `(1 + x h'(x), x h'(x) + x^2 h''(x))`.
pub fn multiplicative_gamma_k<D: LogDensity + ?Sized>(density: &D, x: f64) -> (f64, f64) {
    let xh1 = x * density.h1(x);
    (1.0 + xh1, xh1 + x * x * density.h2(x))
}

/// Observed data with its signal strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    x: Vec<f64>,
    epsilon: f64,
}

impl Observations {
    pub fn new(x: Vec<f64>, epsilon: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::domain("observations must be nonempty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations must be finite"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::domain(format!(
                "signal strength must be >= 0, got {epsilon}"
            )));
        }
        Ok(Observations { x, epsilon })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `ln(p / (1 - p))`.
pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(p / q)` for a probability `p` given together with its complement
/// `q`. Near 1 the complement `1 - p` has lost most of its digits, so
/// callers that can compute `q` directly keep full precision.
pub fn log_odds_pair(p: f64, q: f64) -> f64 {
    p.ln() - q.ln()
}

/// Second-order expansion of `ln E exp(g(eps * eta))` for binary `eta` with
/// `E eta = mean` and `E eta eta' = second`.
pub fn log_mgf_expansion(
    g0: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    mean: &DVector<f64>,
    second: &DMatrix<f64>,
    epsilon: f64,
) -> Result<f64> {
    let n = grad.len();
    if mean.len() != n || hess.shape() != (n, n) || second.shape() != (n, n) {
        return Err(Error::domain("dimension mismatch in log-MGF expansion"));
    }
    let first = grad.dot(mean);
    let trace: f64 = hess.component_mul(&second.transpose()).sum();
    let cov = second - mean * mean.transpose();
    let quad = grad.dot(&(&cov * grad));
    Ok(g0 + first * epsilon + 0.5 * (trace + quad) * epsilon * epsilon)
}

/// Logit at one site from the full (gradient, Hessian) form, using the
/// moment slice around that site. `gamma` and `hess` cover all `m` sites.
pub fn logit_general_at(
    gamma: &DVector<f64>,
    hess: &DMatrix<f64>,
    slice: &WindowSlice,
    log_prior_odds: f64,
    epsilon: f64,
) -> Result<f64> {
    let m = gamma.len();
    if hess.shape() != (m, m) {
        return Err(Error::domain("Hessian must be m x m"));
    }
    if let Some(&s) = slice.sites.iter().find(|&&s| s >= m) {
        return Err(Error::domain(format!("window site {s} out of range")));
    }
    let g = DVector::from_iterator(slice.sites.len(), slice.sites.iter().map(|&s| gamma[s]));
    let h = hess.select_rows(&slice.sites).select_columns(&slice.sites);
    let l1 = log_mgf_expansion(0.0, &g, &h, &slice.mean[1], &slice.second[1], epsilon)?;
    let l0 = log_mgf_expansion(0.0, &g, &h, &slice.mean[0], &slice.second[0], epsilon)?;
    Ok(log_prior_odds + l1 - l0)
}

/// Logits at every site from the general form, one slice per site.
pub fn logit_general(
    gamma: &DVector<f64>,
    hess: &DMatrix<f64>,
    slices: &[WindowSlice],
    log_prior_odds: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    if slices.len() != gamma.len() {
        return Err(Error::domain("need one moment slice per site"));
    }
    slices
        .iter()
        .map(|s| logit_general_at(gamma, hess, s, log_prior_odds, epsilon))
        .collect()
}

/// Per-site gradient and curvature vectors `(gamma(X), k(X))`.
pub fn noise_derivatives<D: LogDensity>(x: &[f64], noise: &NoiseModel<D>) -> (Vec<f64>, Vec<f64>) {
    x.iter().map(|&v| noise.gamma_k(v)).unzip()
}

/// Precomputed windowed moment differences for the localized expansion.
#[derive(Debug, Clone)]
pub struct LocalizedEngine {
    w: usize,
    log_prior_odds: f64,
    /// `E_1 - E_0` by offset slot.
    d_mean: Vec<f64>,
    /// `Cov_1 - Cov_0`, row-major over offset slots.
    d_cov: Vec<f64>,
}

impl LocalizedEngine {
    /// Prior odds are taken from the moments' marginal `psig_hat`.
    pub fn new(moments: &WindowedMoments) -> Result<Self> {
        let p = moments.psig_hat();
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!(
                "marginal must lie in (0, 1), got {p}"
            )));
        }
        Ok(Self::with_log_prior_odds(moments, log_odds(p)))
    }

    pub fn with_log_prior_odds(moments: &WindowedMoments, log_prior_odds: f64) -> Self {
        let offsets: Vec<isize> = moments.offsets().collect();
        let d_mean = offsets
            .iter()
            .map(|&d| moments.mu(1, d) - moments.mu(0, d))
            .collect();
        let d_cov = offsets
            .iter()
            .flat_map(|&a| offsets.iter().map(move |&b| (a, b)))
            .map(|(a, b)| moments.cov(1, a, b) - moments.cov(0, a, b))
            .collect();
        LocalizedEngine {
            w: moments.w(),
            log_prior_odds,
            d_mean,
            d_cov,
        }
    }

    pub fn log_prior_odds(&self) -> f64 {
        self.log_prior_odds
    }

    fn site(&self, gamma: &[f64], k: &[f64], t: usize, eps: f64) -> f64 {
        let m = gamma.len();
        let l = 2 * self.w + 1;
        let lo = self.w.saturating_sub(t);
        let hi = (m - 1 - t + self.w).min(l - 1);
        let base = t + lo - self.w;
        let g = &gamma[base..base + hi - lo + 1];
        let kk = &k[base..base + hi - lo + 1];
        let dm = &self.d_mean[lo..=hi];
        let first: f64 = g.iter().zip(dm).map(|(a, b)| a * b).sum();
        let curv: f64 = kk.iter().zip(dm).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for (ra, ga) in (lo..=hi).zip(g) {
            let row = &self.d_cov[ra * l + lo..=ra * l + hi];
            quad += ga * row.iter().zip(g).map(|(c, gb)| c * gb).sum::<f64>();
        }
        self.log_prior_odds + first * eps + 0.5 * (curv + quad) * eps * eps
    }

    /// Logit at site `t` given precomputed `gamma(X)` and `k(X)`.
    pub fn logit_at(&self, gamma: &[f64], k: &[f64], t: usize, epsilon: f64) -> f64 {
        assert_eq!(gamma.len(), k.len());
        assert!(t < gamma.len());
        self.site(gamma, k, t, epsilon)
    }

    /// Logits at every site.
    pub fn logits<D: LogDensity>(&self, x: &Observations, noise: &NoiseModel<D>) -> Vec<f64> {
        let (gamma, k) = noise_derivatives(x.x(), noise);
        let eps = x.epsilon();
        (0..gamma.len())
            .map(|t| self.site(&gamma, &k, t, eps))
            .collect()
    }
}

/// Localized-expansion logit at a single site.
pub fn logit_localized<D: LogDensity>(
    x: &Observations,
    noise: &NoiseModel<D>,
    moments: &WindowedMoments,
    log_prior_odds: f64,
    t: usize,
) -> Result<f64> {
    if t >= x.len() {
        return Err(Error::domain(format!("site {t} out of range")));
    }
    let (gamma, k) = noise_derivatives(x.x(), noise);
    let engine = LocalizedEngine::with_log_prior_odds(moments, log_prior_odds);
    Ok(engine.site(&gamma, &k, t, x.epsilon()))
}

/// Logits paired with their logistic transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVector {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

const SATURATION: f64 = 700.0;

/// Overflow-safe logistic function; `|r| > 700` saturates to exactly 0 or 1.
pub fn logistic(r: f64) -> f64 {
    if r > SATURATION {
        1.0
    } else if r < -SATURATION {
        0.0
    } else if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

pub fn posteriors(logits: Vec<f64>) -> PosteriorVector {
    let probs = logits.iter().map(|&r| logistic(r)).collect();
    PosteriorVector { logits, probs }
}

impl PosteriorVector {
    /// `P(eta_t = 0 | X)` evaluated without cancellation.
    pub fn complement(&self, t: usize) -> f64 {
        logistic(-self.logits[t])
    }
}
