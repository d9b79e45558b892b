//! Exact conditional probabilities `P(eta_t = 1 | X)` for small or
//! HMM-structured instances.
//!
//! Two independent routes: literal enumeration of the mixture over signal
//! configurations (or parent paths), and the scaled forward-backward
//! recursion on the parent chain. Both work in log space.

use crate::cond_likelihood::{LogDensity, NoiseModel, Observations};
use crate::error::{Error, Result};
use crate::hmm_signal::ParentChainSpec;

/// Maximum `m` for enumeration over binary configurations.
pub const MAX_BINARY_SITES: usize = 20;
/// Maximum `m` for enumeration over parent-chain paths.
pub const MAX_PATH_SITES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub probs: Vec<f64>,
    /// `ln rho(X)`, the log marginal density of the data.
    pub log_evidence: f64,
}

/// Explicit prior over binary vectors of length `m`: entry `k` is the
/// probability of the configuration whose bit `t` is `eta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPrior {
    m: usize,
    probs: Vec<f64>,
}

impl BinaryPrior {
    pub fn new(m: usize, probs: Vec<f64>) -> Result<Self> {
        if m == 0 || m > MAX_BINARY_SITES {
            return Err(Error::Budget(format!(
                "binary enumeration supports 1..={MAX_BINARY_SITES} sites, got {m}"
            )));
        }
        if probs.len() != 1 << m {
            return Err(Error::domain(format!(
                "need 2^{m} probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::domain("prior probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("prior sums to {total}")));
        }
        Ok(BinaryPrior { m, probs })
    }

    /// Independent sites with `P(eta_t = 1) = p[t]`.
    pub fn independent(p: &[f64]) -> Result<Self> {
        let m = p.len();
        if m == 0 || m > MAX_BINARY_SITES {
            return Err(Error::Budget(format!("{m} sites")));
        }
        let probs = (0..1usize << m)
            .map(|k| {
                (0..m)
                    .map(|t| if k >> t & 1 == 1 { p[t] } else { 1.0 - p[t] })
                    .product()
            })
            .collect();
        BinaryPrior::new(m, probs)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ExactPrior<'a> {
    Binary(&'a BinaryPrior),
    Chain(&'a ParentChainSpec),
}

/// Streaming `ln sum exp` accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn finish(total: LogSumExp, ones: Vec<LogSumExp>) -> Result<ExactPosterior> {
    let log_evidence = total.value();
    if !log_evidence.is_finite() {
        return Err(Error::Numerical(
            "data has zero likelihood under the prior".into(),
        ));
    }
    let probs = ones
        .iter()
        .map(|a| (a.value() - log_evidence).exp().clamp(0.0, 1.0))
        .collect();
    Ok(ExactPosterior {
        probs,
        log_evidence,
    })
}

/// Posterior by literal enumeration of the mixture over configurations.
pub fn brute_force_posterior<D: LogDensity>(
    prior: ExactPrior<'_>,
    x: &Observations,
    noise: &NoiseModel<D>,
) -> Result<ExactPosterior> {
    let m = x.len();
    let eps = x.epsilon();
    // Per-site log-likelihoods under eta_t = 0 and eta_t = 1.
    let site_ll: Vec<[f64; 2]> = x
        .x()
        .iter()
        .map(|&v| [noise.log_emission(v, 0.0), noise.log_emission(v, eps)])
        .collect();
    match prior {
        ExactPrior::Binary(bp) => {
            if bp.m != m {
                return Err(Error::domain("prior and data lengths differ"));
            }
            let mut total = LogSumExp::new();
            let mut ones = vec![LogSumExp::new(); m];
            for (k, &p) in bp.probs.iter().enumerate() {
                let lw = ln(p) + (0..m).map(|t| site_ll[t][k >> t & 1]).sum::<f64>();
                total.add(lw);
                for (t, acc) in ones.iter_mut().enumerate() {
                    if k >> t & 1 == 1 {
                        acc.add(lw);
                    }
                }
            }
            finish(total, ones)
        }
        ExactPrior::Chain(spec) => {
            if m > MAX_PATH_SITES {
                return Err(Error::Budget(format!(
                    "path enumeration supports at most {MAX_PATH_SITES} sites, got {m}"
                )));
            }
            let d = spec.dim();
            let log_pi: Vec<f64> = spec.pi().as_slice().iter().map(|&p| ln(p)).collect();
            let log_p: Vec<Vec<f64>> = spec
                .transition()
                .rows()
                .into_iter()
                .map(|r| r.into_iter().map(ln).collect())
                .collect();
            let tau: Vec<usize> = (0..d).map(|s| spec.tau(s) as usize).collect();
            let mut total = LogSumExp::new();
            let mut ones = vec![LogSumExp::new(); m];
            let mut path = vec![0usize; m];
            loop {
                let mut lw = log_pi[path[0]] + site_ll[0][tau[path[0]]];
                for t in 1..m {
                    lw += log_p[path[t - 1]][path[t]] + site_ll[t][tau[path[t]]];
                }
                total.add(lw);
                for t in 0..m {
                    if tau[path[t]] == 1 {
                        ones[t].add(lw);
                    }
                }
                // Odometer increment over d^m paths.
                let mut pos = 0;
                loop {
                    if pos == m {
                        return finish(total, ones);
                    }
                    path[pos] += 1;
                    if path[pos] < d {
                        break;
                    }
                    path[pos] = 0;
                    pos += 1;
                }
            }
        }
    }
}

/// Full smoothing output of the forward-backward recursion.
#[derive(Debug, Clone)]
pub struct StatePosterior {
    /// `P(M_t = s | X)`, one row per site.
    pub states: Vec<Vec<f64>>,
    pub log_evidence: f64,
}

/// Scaled forward-backward recursion on the parent chain.
pub fn forward_backward_states<D: LogDensity>(
    spec: &ParentChainSpec,
    x: &Observations,
    noise: &NoiseModel<D>,
) -> Result<StatePosterior> {
    let m = x.len();
    let d = spec.dim();
    let eps = x.epsilon();
    let p = spec.transition().rows();
    let tau: Vec<usize> = (0..d).map(|s| spec.tau(s) as usize).collect();

    // Emissions shifted by their per-site maximum; the shift re-enters the evidence.
    let mut shift = Vec::with_capacity(m);
    let emis: Vec<Vec<f64>> = x
        .x()
        .iter()
        .map(|&v| {
            let ll = [noise.log_emission(v, 0.0), noise.log_emission(v, eps)];
            let top = ll[0].max(ll[1]);
            shift.push(top);
            tau.iter().map(|&k| (ll[k] - top).exp()).collect()
        })
        .collect();

    let mut alpha = vec![vec![0.0; d]; m];
    let mut scale = vec![0.0; m];
    for s in 0..d {
        alpha[0][s] = spec.pi().as_slice()[s] * emis[0][s];
    }
    for t in 0..m {
        if t > 0 {
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += alpha[t - 1][i] * p[i][j];
                }
                alpha[t][j] = acc * emis[t][j];
            }
        }
        let c: f64 = alpha[t].iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Numerical(format!(
                "forward pass degenerate at site {t}"
            )));
        }
        alpha[t].iter_mut().for_each(|a| *a /= c);
        scale[t] = c;
    }

    let mut beta = vec![1.0; d];
    let mut states = vec![vec![0.0; d]; m];
    for t in (0..m).rev() {
        if t + 1 < m {
            let next: Vec<f64> = (0..d).map(|j| emis[t + 1][j] * beta[j]).collect();
            beta = (0..d)
                .map(|i| (0..d).map(|j| p[i][j] * next[j]).sum::<f64>() / scale[t + 1])
                .collect();
        }
        let post: Vec<f64> = (0..d).map(|s| alpha[t][s] * beta[s]).collect();
        let z: f64 = post.iter().sum();
        states[t] = post.into_iter().map(|v| v / z).collect();
    }

    let log_evidence = scale.iter().zip(&shift).map(|(c, s)| c.ln() + s).sum();
    Ok(StatePosterior {
        states,
        log_evidence,
    })
}

/// `P(eta_t = 1 | X)` summed over non-null parent states.
pub fn forward_backward_posterior<D: LogDensity>(
    spec: &ParentChainSpec,
    x: &Observations,
    noise: &NoiseModel<D>,
) -> Result<ExactPosterior> {
    let sp = forward_backward_states(spec, x, noise)?;
    let mask = spec.null_mask();
    let probs = sp
        .states
        .iter()
        .map(|row| {
            row.iter()
                .zip(mask)
                .filter(|(_, &n)| !n)
                .map(|(v, _)| v)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    Ok(ExactPosterior {
        probs,
        log_evidence: sp.log_evidence,
    })
}

/// Bayes rule site by site for independent signals with `P(eta_t = 1) = psig`.
pub fn sitewise_posterior<D: LogDensity>(
    psig: f64,
    x: &Observations,
    noise: &NoiseModel<D>,
) -> Vec<f64> {
    let eps = x.epsilon();
    x.x()
        .iter()
        .map(|&v| {
            let l1 = psig.ln() + noise.log_emission(v, eps);
            let l0 = (1.0 - psig).ln() + noise.log_emission(v, 0.0);
            1.0 / (1.0 + (l0 - l1).exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond_likelihood::StandardGaussian;
    use crate::matrix_ensembles::{ProbVector, TransitionMatrix};

    fn phi(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn single_site_bayes_rule() {
        let prior = BinaryPrior::independent(&[0.5]).unwrap();
        let x = Observations::new(vec![0.7], 1.0).unwrap();
        let post = brute_force_posterior(
            ExactPrior::Binary(&prior),
            &x,
            &NoiseModel::gaussian_additive(),
        )
        .unwrap();
        let expected = phi(0.7 - 1.0) * 0.5 / (phi(0.7 - 1.0) * 0.5 + phi(0.7) * 0.5);
        assert!((post.probs[0] - expected).abs() < 1e-14);
        assert!((post.log_evidence - (0.5 * phi(-0.3) + 0.5 * phi(0.7)).ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_signal_returns_prior_marginals() {
        let p = [0.1, 0.4, 0.8];
        let prior = BinaryPrior::independent(&p).unwrap();
        let x = Observations::new(vec![1.0, -2.0, 0.5], 0.0).unwrap();
        let post = brute_force_posterior(
            ExactPrior::Binary(&prior),
            &x,
            &NoiseModel::gaussian_additive(),
        )
        .unwrap();
        for (a, b) in post.probs.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_prior_factorizes() {
        let prior = BinaryPrior::independent(&[0.2; 6]).unwrap();
        let x = Observations::new(vec![0.1, 2.0, -1.0, 0.9, 3.1, -0.4], 1.2).unwrap();
        let noise = NoiseModel::gaussian_additive();
        let post = brute_force_posterior(ExactPrior::Binary(&prior), &x, &noise).unwrap();
        for (a, b) in post.probs.iter().zip(sitewise_posterior(0.2, &x, &noise)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_chain_is_sitewise() {
        let pi = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let spec = ParentChainSpec::new(pi.clone(), TransitionMatrix::rank_one(&pi), &[0]).unwrap();
        let x = Observations::new(vec![0.5, 1.5, -0.5, 2.5], 1.0).unwrap();
        let noise = NoiseModel::gaussian_additive();
        let fb = forward_backward_posterior(&spec, &x, &noise).unwrap();
        for (a, b) in fb.probs.iter().zip(sitewise_posterior(0.5, &x, &noise)) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = Observations::new(x.x().to_vec(), 0.0).unwrap();
        let fb = forward_backward_posterior(&spec, &zero, &noise).unwrap();
        assert!(fb.probs.iter().all(|p| (p - 0.5).abs() < 1e-12));
    }

    struct Shifted(f64);

    impl LogDensity for Shifted {
        fn h(&self, z: f64) -> f64 {
            StandardGaussian.h(z) + self.0
        }
        fn h1(&self, z: f64) -> f64 {
            StandardGaussian.h1(z)
        }
        fn h2(&self, z: f64) -> f64 {
            StandardGaussian.h2(z)
        }
    }

    #[test]
    fn posteriors_ignore_density_offsets() {
        let p = TransitionMatrix::from_rows_normalized(&[
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.5, 0.2],
            vec![0.2, 0.2, 0.6],
        ])
        .unwrap();
        let pi = ProbVector::uniform(3).unwrap();
        let spec = ParentChainSpec::new(pi, p, &[0, 1]).unwrap();
        let x = Observations::new(vec![0.3, 1.9, 1.1, -0.2, 0.8], 0.9).unwrap();
        let base = NoiseModel::new(
            crate::cond_likelihood::Interaction::Additive,
            StandardGaussian,
        );
        let shifted = NoiseModel::new(crate::cond_likelihood::Interaction::Additive, Shifted(5.0));
        let a = forward_backward_posterior(&spec, &x, &base).unwrap();
        let b = forward_backward_posterior(&spec, &x, &shifted).unwrap();
        let c = brute_force_posterior(ExactPrior::Chain(&spec), &x, &shifted).unwrap();
        for t in 0..5 {
            assert!((a.probs[t] - b.probs[t]).abs() < 1e-12);
            assert!((a.probs[t] - c.probs[t]).abs() < 1e-12);
        }
        assert!((b.log_evidence - a.log_evidence - 25.0).abs() < 1e-9);
    }

    #[test]
    fn enumeration_budgets() {
        assert!(matches!(
            BinaryPrior::new(21, vec![]),
            Err(Error::Budget(_))
        ));
        let pi = ProbVector::uniform(2).unwrap();
        let spec = ParentChainSpec::new(pi.clone(), TransitionMatrix::rank_one(&pi), &[0]).unwrap();
        let x = Observations::new(vec![0.0; 11], 1.0).unwrap();
        assert!(matches!(
            brute_force_posterior(
                ExactPrior::Chain(&spec),
                &x,
                &NoiseModel::gaussian_additive()
            ),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let p =
            TransitionMatrix::from_rows_normalized(&[vec![0.95, 0.05], vec![0.2, 0.8]]).unwrap();
        let pi = ProbVector::new(vec![0.8, 0.2]).unwrap();
        let spec = ParentChainSpec::new(pi, p, &[0]).unwrap();
        let x: Vec<f64> = (0..20_000)
            .map(|t| ((t * 7919) % 100) as f64 / 25.0 - 2.0)
            .collect();
        let post = forward_backward_posterior(
            &spec,
            &Observations::new(x, 1.0).unwrap(),
            &NoiseModel::gaussian_additive(),
        )
        .unwrap();
        assert!(post.log_evidence.is_finite());
        assert!(post.probs.iter().all(|p| p.is_finite()));
    }
}
