//! End-to-end Monte Carlo comparison of Bayes BH and BH on hidden Markov
//! signals observed through additive Gaussian noise.
//!
//! Random streams: every draw comes from `ChaCha8Rng::seed_from_u64(seed)`
//! with a stream id chosen by [`Stream`]. The chain uses stream 0, the
//! training signal stream 1, the test signal stream 2 and replication `r`
//! stream `16 + r`. A replication's noise is shared by every `(epsilon,
//! alpha)` cell, and changing `n_reps` leaves earlier replications intact.

pub mod kde;
pub mod output;
pub mod presets;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize};

use crate::cond_likelihood::{posteriors, LocalizedEngine, NoiseModel, Observations};
use crate::error::{Error, Result};
use crate::hmm_signal::{estimate_moments, simulate_signal, BinarySignal, ParentChainSpec};
use crate::matrix_ensembles::{
    eigenmoduli, sample_constrained_transition, sample_stationary_vector, ProbVector,
    SinkhornOptions, SpectralBounds, SpectralSummary, TransitionMatrix,
};
use crate::procedures::{augmented_alpha, bayes_bh, bh, confusion, p_values_one_sided};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Chain,
    Training,
    Test,
    Replication(usize),
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Chain => 0,
            Stream::Training => 1,
            Stream::Test => 2,
            Stream::Replication(r) => 16 + r as u64,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Where the parent chain comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChainSource {
    /// Random `pi` and a Sinkhorn-balanced `P` meeting the spectral bounds.
    Sampled,
    /// One of [`presets::PRESETS`].
    Preset { name: String },
    /// Explicit `pi` and rows; both are renormalized.
    Given { pi: Vec<f64>, matrix: Vec<Vec<f64>> },
}

fn one_or_many<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub d: usize,
    /// Null states, 1-based.
    pub null_states: Vec<usize>,
    pub psig: f64,
    pub m: usize,
    /// Half window; `None` picks 3 for a dependent chain and 0 otherwise.
    pub w: Option<usize>,
    #[serde(deserialize_with = "one_or_many")]
    pub epsilon: Vec<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub max_attempts: usize,
    pub chain: ChainSource,
    /// Draw a fresh test signal in every replication.
    pub redraw_eta: bool,
    pub parallel: bool,
    /// Grid size of density curves; 0 disables them.
    pub density_points: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            d: 5,
            null_states: vec![1, 2],
            psig: 0.1,
            m: 100_000,
            w: None,
            epsilon: vec![1.0],
            alpha: vec![0.2],
            lambda: 0.0,
            mu: 0.0,
            n_reps: 1000,
            seed: 0,
            sinkhorn_tol: 1e-10,
            sinkhorn_max_iter: 10_000,
            max_attempts: 50_000,
            chain: ChainSource::Sampled,
            redraw_eta: false,
            parallel: true,
            density_points: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::domain("n_reps must be at least 1"));
        }
        if self.epsilon.is_empty() || self.epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::domain(
                "epsilon values must be finite and nonnegative",
            ));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::domain("alpha values must lie in (0, 1)"));
        }
        if let Some(w) = self.w {
            if self.m <= 2 * w + 1 {
                return Err(Error::domain(format!(
                    "m = {} must exceed 2w + 1 = {}",
                    self.m,
                    2 * w + 1
                )));
            }
        } else if self.m <= 7 {
            return Err(Error::domain("m must exceed 7 with the automatic window"));
        }
        if !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 {
            return Err(Error::domain(
                "Sinkhorn tolerance and iteration cap must be positive",
            ));
        }
        if self.chain == ChainSource::Sampled {
            if !(self.psig > 0.0 && self.psig < 1.0) {
                return Err(Error::domain(format!(
                    "psig must lie in (0, 1), got {}",
                    self.psig
                )));
            }
            SpectralBounds::new(self.lambda, self.mu)?;
            if self.max_attempts == 0 {
                return Err(Error::domain("max_attempts must be positive"));
            }
        }
        if self.density_points == 1 {
            return Err(Error::domain("density_points must be 0 or at least 2"));
        }
        Ok(())
    }

    pub fn sinkhorn_options(&self) -> SinkhornOptions {
        SinkhornOptions {
            tol: self.sinkhorn_tol,
            max_iter: self.sinkhorn_max_iter,
        }
    }
}

/// 1-based state labels to 0-based indices.
pub fn zero_based(states: &[usize]) -> Result<Vec<usize>> {
    states
        .iter()
        .map(|&s| {
            s.checked_sub(1)
                .ok_or_else(|| Error::domain("state labels start at 1"))
        })
        .collect()
}

/// The parent chain actually used by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub pi: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    /// 1-based.
    pub null_states: Vec<usize>,
    pub psig: f64,
    pub slem: f64,
    pub tlem: f64,
    /// Sinkhorn draws taken; 0 for fixed or rank-one chains.
    pub attempts: usize,
}

pub struct BuiltChain {
    pub spec: ParentChainSpec,
    pub spectrum: SpectralSummary,
    pub attempts: usize,
}

impl BuiltChain {
    pub fn report(&self) -> ChainReport {
        ChainReport {
            pi: self.spec.pi().as_slice().to_vec(),
            matrix: self.spec.transition().rows(),
            null_states: self.spec.null_states().iter().map(|s| s + 1).collect(),
            psig: self.spec.psig(),
            slem: self.spectrum.slem,
            tlem: self.spectrum.tlem,
            attempts: self.attempts,
        }
    }
}

/// Samples or loads the parent chain.
pub fn build_chain(cfg: &SimulationConfig) -> Result<BuiltChain> {
    let nulls = zero_based(&cfg.null_states)?;
    let (pi, p, attempts) = match &cfg.chain {
        ChainSource::Sampled => {
            let mut rng = stream_rng(cfg.seed, Stream::Chain);
            let pi = sample_stationary_vector(cfg.d, &nulls, cfg.psig, &mut rng)?;
            let bounds = SpectralBounds::new(cfg.lambda, cfg.mu)?;
            let s = sample_constrained_transition(
                &pi,
                bounds,
                cfg.sinkhorn_options(),
                cfg.max_attempts,
                &mut rng,
            )?;
            (pi, s.matrix, s.attempts)
        }
        ChainSource::Preset { name } => {
            let p = presets::preset(name)?;
            (p.stationary()?, p.transition()?, 0)
        }
        ChainSource::Given { pi, matrix } => (
            ProbVector::normalized(pi.clone())?,
            TransitionMatrix::from_rows_normalized(matrix)?,
            0,
        ),
    };
    let spectrum = eigenmoduli(&p)?;
    let spec = ParentChainSpec::new(pi, p, &nulls)?;
    Ok(BuiltChain {
        spec,
        spectrum,
        attempts,
    })
}

/// Window used when none is configured.
pub fn auto_window(spectrum: &SpectralSummary) -> usize {
    if spectrum.slem > 1e-12 {
        3
    } else {
        0
    }
}

/// Outcome of both procedures on one replication for one `(epsilon, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Level handed to BH.
    pub alpha_bh: f64,
    pub fdp_bbh: f64,
    pub ntd_bbh: usize,
    pub r_bbh: usize,
    pub fdp_bh: f64,
    pub ntd_bh: usize,
    pub r_bh: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureStats {
    pub mean_fdp: f64,
    /// Sample standard deviation over replications; absent with one replication.
    pub sd_fdp: Option<f64>,
    pub mean_ntd: f64,
    pub sd_ntd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub epsilon: f64,
    pub alpha: f64,
    pub n_reps: usize,
    pub bbh: ProcedureStats,
    pub bh: ProcedureStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub cells: Vec<CellSummary>,
}

fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (mean, sd)
}

fn stats(fdp: &[f64], ntd: &[f64]) -> ProcedureStats {
    let (mean_fdp, sd_fdp) = mean_sd(fdp);
    let (mean_ntd, sd_ntd) = mean_sd(ntd);
    ProcedureStats {
        mean_fdp,
        sd_fdp,
        mean_ntd,
        sd_ntd,
    }
}

/// Groups records by `(epsilon, alpha)` in first-appearance order. Sums run
/// in record order, so the result depends only on the records.
fn cells_of(records: &[ReplicationRecord]) -> Vec<(f64, f64, Vec<&ReplicationRecord>)> {
    let mut cells: Vec<(f64, f64, Vec<&ReplicationRecord>)> = Vec::new();
    for rec in records {
        let key = (rec.epsilon.to_bits(), rec.alpha.to_bits());
        match cells
            .iter_mut()
            .find(|(e, a, _)| (e.to_bits(), a.to_bits()) == key)
        {
            Some(cell) => cell.2.push(rec),
            None => cells.push((rec.epsilon, rec.alpha, vec![rec])),
        }
    }
    cells
}

fn summarize_lenient(records: &[ReplicationRecord]) -> SummaryTable {
    let cells = cells_of(records)
        .into_iter()
        .map(|(epsilon, alpha, recs)| {
            let col =
                |f: fn(&ReplicationRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<_>>();
            CellSummary {
                epsilon,
                alpha,
                n_reps: recs.len(),
                bbh: stats(&col(|r| r.fdp_bbh), &col(|r| r.ntd_bbh as f64)),
                bh: stats(&col(|r| r.fdp_bh), &col(|r| r.ntd_bh as f64)),
            }
        })
        .collect();
    SummaryTable { cells }
}

/// Mean and sample standard deviation of FDP and NTD per `(epsilon, alpha)`.
pub fn summarize(records: &[ReplicationRecord]) -> Result<SummaryTable> {
    let table = summarize_lenient(records);
    if table.cells.is_empty() || table.cells.iter().any(|c| c.n_reps < 2) {
        return Err(Error::domain(
            "spreads need at least two replications per cell",
        ));
    }
    Ok(table)
}

/// Per-experiment quantities shared by every replication.
pub struct Prepared {
    pub cfg: SimulationConfig,
    pub chain: BuiltChain,
    pub w: usize,
    pub psig_hat: f64,
    pub engine: LocalizedEngine,
    pub eta: BinarySignal,
}

/// Builds the chain, trains moments and draws the test signal.
pub fn prepare(cfg: &SimulationConfig) -> Result<Prepared> {
    cfg.validate()?;
    let chain = build_chain(cfg)?;
    let w = cfg.w.unwrap_or_else(|| auto_window(&chain.spectrum));
    let theta = simulate_signal(
        &chain.spec,
        cfg.m,
        &mut stream_rng(cfg.seed, Stream::Training),
    )?;
    let moments = estimate_moments(&theta, w)?;
    let engine = LocalizedEngine::new(&moments)?;
    let eta = simulate_signal(&chain.spec, cfg.m, &mut stream_rng(cfg.seed, Stream::Test))?;
    Ok(Prepared {
        cfg: cfg.clone(),
        chain,
        w,
        psig_hat: moments.psig_hat(),
        engine,
        eta,
    })
}

impl Prepared {
    /// All `(epsilon, alpha)` records of replication `rep`.
    pub fn replicate(&self, rep: usize) -> Result<Vec<ReplicationRecord>> {
        let cfg = &self.cfg;
        let mut rng = stream_rng(cfg.seed, Stream::Replication(rep));
        let fresh;
        let eta = if cfg.redraw_eta {
            fresh = simulate_signal(&self.chain.spec, cfg.m, &mut rng)?;
            &fresh
        } else {
            &self.eta
        };
        let z: Vec<f64> = (0..cfg.m).map(|_| rng.sample(StandardNormal)).collect();
        let noise = NoiseModel::gaussian_additive();
        let mut out = Vec::with_capacity(cfg.epsilon.len() * cfg.alpha.len());
        for &epsilon in &cfg.epsilon {
            let x: Vec<f64> = eta
                .bits()
                .iter()
                .zip(&z)
                .map(|(&b, &z)| epsilon * f64::from(b) + z)
                .collect();
            let obs = Observations::new(x, epsilon)?;
            let probs = posteriors(self.engine.logits(&obs, &noise)).probs;
            let p = p_values_one_sided(obs.x());
            for &alpha in &cfg.alpha {
                let bbh = confusion(&bayes_bh(&probs, alpha)?, eta)?;
                let alpha_bh = augmented_alpha(eta, alpha)?;
                let bhc = confusion(&bh(&p, alpha_bh)?, eta)?;
                out.push(ReplicationRecord {
                    rep,
                    epsilon,
                    alpha,
                    alpha_bh,
                    fdp_bbh: bbh.fdp(),
                    ntd_bbh: bbh.ntd(),
                    r_bbh: bbh.r,
                    fdp_bh: bhc.fdp(),
                    ntd_bh: bhc.ntd(),
                    r_bh: bhc.r,
                });
            }
        }
        Ok(out)
    }

    /// Runs every replication. On failure the records of the replications
    /// preceding the first failed one are returned with the error.
    pub fn replicate_all(&self) -> (Vec<Vec<ReplicationRecord>>, Option<Error>) {
        let n = self.cfg.n_reps;
        let results: Vec<Result<Vec<ReplicationRecord>>> = if self.cfg.parallel {
            self.replicate_parallel(n)
        } else {
            (0..n).map(|r| self.replicate(r)).collect()
        };
        let mut done = Vec::with_capacity(n);
        for res in results {
            match res {
                Ok(recs) => done.push(recs),
                Err(e) => return (done, Some(e)),
            }
        }
        (done, None)
    }

    #[cfg(feature = "parallel")]
    fn replicate_parallel(&self, n: usize) -> Vec<Result<Vec<ReplicationRecord>>> {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(|r| self.replicate(r)).collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn replicate_parallel(&self, n: usize) -> Vec<Result<Vec<ReplicationRecord>>> {
        (0..n).map(|r| self.replicate(r)).collect()
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub m: usize,
    pub w: usize,
    pub n_reps: usize,
    pub chain: ChainReport,
    /// Proportion of ones in the training signal.
    pub psig_hat: f64,
    /// Proportion of ones in the fixed test signal.
    pub psi_tilde: f64,
    pub redraw_eta: bool,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    /// Ordered by `(epsilon, alpha)` cell, then replication.
    pub records: Vec<ReplicationRecord>,
}

fn cell_major(per_rep: Vec<Vec<ReplicationRecord>>) -> Vec<ReplicationRecord> {
    let cells = per_rep.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(cells * per_rep.len());
    for c in 0..cells {
        out.extend(per_rep.iter().map(|recs| recs[c]));
    }
    out
}

impl Prepared {
    pub fn assemble(&self, per_rep: Vec<Vec<ReplicationRecord>>) -> ExperimentOutput {
        let records = cell_major(per_rep);
        let table = summarize_lenient(&records);
        ExperimentOutput {
            summary: ExperimentSummary {
                seed: self.cfg.seed,
                m: self.cfg.m,
                w: self.w,
                n_reps: self.cfg.n_reps,
                chain: self.chain.report(),
                psig_hat: self.psig_hat,
                psi_tilde: self.eta.proportion(),
                redraw_eta: self.cfg.redraw_eta,
                cells: table.cells,
            },
            records,
        }
    }
}

/// Runs the full protocol in memory.
pub fn run_experiment(cfg: &SimulationConfig) -> Result<ExperimentOutput> {
    let prepared = prepare(cfg)?;
    let (per_rep, err) = prepared.replicate_all();
    match err {
        Some(e) => Err(e),
        None => Ok(prepared.assemble(per_rep)),
    }
}
