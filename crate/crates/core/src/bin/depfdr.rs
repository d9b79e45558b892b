use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use depfdr::cond_likelihood::{
    posteriors, Interaction, NoiseModel, Observations, StandardGaussian, StandardLogistic,
};
use depfdr::exact_oracle::{
    brute_force_posterior, forward_backward_posterior, ExactPrior, MAX_PATH_SITES,
};
use depfdr::hmm_signal::{estimate_moments, simulate_signal, ParentChainSpec};
use depfdr::procedures::{bayes_bh, bh, confusion, p_values_one_sided, TestDecision};
use depfdr::sim_harness::output::{
    density_points, read_records, run_to_dir, write_densities, write_summary,
};
use depfdr::sim_harness::{
    build_chain, prepare, stream_rng, zero_based, ChainReport, ChainSource, SimulationConfig,
    Stream,
};
use depfdr::{hmm_signal::BinarySignal, Error, Result};
use serde::{Deserialize, Serialize};

/// Multiple testing under hidden Markov dependence: Bayes BH against BH.
#[derive(Parser)]
#[command(name = "depfdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a stationary vector and a spectrally constrained transition matrix.
    SampleMatrix(SampleMatrixArgs),
    /// Simulate a training signal and print its windowed moment tables.
    SimulateSignal(SimulateSignalArgs),
    /// Run the full replication experiment.
    Run(RunArgs),
    /// Apply Bayes BH or BH to a column of a CSV file.
    Test(TestArgs),
    /// Kernel density curves from a records file.
    Density(DensityArgs),
    /// Exact posteriors of a small instance file.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SampleMatrixArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Null states, 1-based, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    null_states: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    psig: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_attempts: usize,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A chain given either by preset name or by a file holding `pi`, `matrix`
/// and optionally 1-based `null_states`.
#[derive(Args)]
struct ChainArgs {
    #[arg(long, conflicts_with = "matrix_file")]
    preset: Option<String>,
    #[arg(long)]
    matrix_file: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ChainFile {
    pi: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    #[serde(default)]
    null_states: Option<Vec<usize>>,
}

impl ChainArgs {
    /// The source and, for files that carry them, the null states.
    fn source(&self) -> Result<Option<(ChainSource, Option<Vec<usize>>)>> {
        if let Some(name) = &self.preset {
            return Ok(Some((ChainSource::Preset { name: name.clone() }, None)));
        }
        match &self.matrix_file {
            Some(path) => {
                let f: ChainFile = serde_json::from_str(&fs::read_to_string(path)?)?;
                Ok(Some((
                    ChainSource::Given {
                        pi: f.pi,
                        matrix: f.matrix,
                    },
                    f.null_states,
                )))
            }
            None => Ok(None),
        }
    }
}

#[derive(Args)]
struct SimulateSignalArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, default_value_t = 100_000)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    w: usize,
    #[arg(long)]
    seed: u64,
    /// Also write the signal, one byte (0 or 1) per site.
    #[arg(long)]
    theta_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    null_states: Option<Vec<usize>>,
    #[arg(long)]
    psig: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    density_points: Option<usize>,
    #[arg(long)]
    redraw_eta: bool,
    /// Run replications on one thread.
    #[arg(long)]
    serial: bool,
    /// Write per-site logits, posteriors and p-values of replication 0 at
    /// the first epsilon to this CSV file.
    #[arg(long)]
    dump_posteriors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Procedure {
    /// Bayes BH on posterior probabilities.
    Bbh,
    /// BH on p-values.
    Bh,
}

#[derive(Args)]
struct TestArgs {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Column holding posteriors (bbh) or p-values (bh).
    #[arg(long, default_value = "value")]
    column: String,
    /// Optional 0/1 column with the truth; adds outcome counts.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long, value_enum)]
    procedure: Procedure,
    #[arg(long)]
    alpha: f64,
    /// Write per-hypothesis decisions to this CSV file.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 512)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// JSON with `pi`, `matrix`, 1-based `null_states`, `x`, `epsilon` and
    /// optionally `noise` (`gaussian-additive` or `logistic-multiplicative`).
    #[arg(long)]
    instance: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn sample_matrix(a: SampleMatrixArgs) -> Result<()> {
    let cfg = SimulationConfig {
        d: a.d,
        null_states: a.null_states,
        psig: a.psig,
        lambda: a.lambda,
        mu: a.mu,
        seed: a.seed,
        sinkhorn_tol: a.tol,
        max_attempts: a.max_attempts,
        ..SimulationConfig::default()
    };
    cfg.validate()?;
    let report: ChainReport = build_chain(&cfg)?.report();
    write_summary(output(a.out.as_deref())?, &report)
}

#[derive(Serialize)]
struct MomentTables {
    w: usize,
    psig_hat: f64,
    offsets: Vec<isize>,
    /// `mean[i][a]`: `E(eta_{t+a} | eta_t = i)`.
    mean: [Vec<f64>; 2],
    /// `second[i][a][b]`: `E(eta_{t+a} eta_{t+b} | eta_t = i)`.
    second: [Vec<Vec<f64>>; 2],
}

fn chain_spec(args: &ChainArgs) -> Result<ParentChainSpec> {
    let (source, nulls) = args
        .source()?
        .ok_or_else(|| Error::Domain("give --preset or --matrix-file".into()))?;
    let mut cfg = SimulationConfig {
        chain: source,
        ..SimulationConfig::default()
    };
    if let Some(n) = nulls {
        cfg.null_states = n;
    }
    Ok(build_chain(&cfg)?.spec)
}

fn simulate(a: SimulateSignalArgs) -> Result<()> {
    let spec = chain_spec(&a.chain)?;
    let theta = simulate_signal(&spec, a.m, &mut stream_rng(a.seed, Stream::Training))?;
    let mom = estimate_moments(&theta, a.w)?;
    if let Some(path) = &a.theta_out {
        fs::write(path, theta.bits())?;
    }
    let offsets: Vec<isize> = mom.offsets().collect();
    let tables = MomentTables {
        w: mom.w(),
        psig_hat: mom.psig_hat(),
        mean: [0u8, 1].map(|i| offsets.iter().map(|&d| mom.mu(i, d)).collect()),
        second: [0u8, 1].map(|i| {
            offsets
                .iter()
                .map(|&x| offsets.iter().map(|&y| mom.joint(i, x, y)).collect())
                .collect()
        }),
        offsets,
    };
    write_summary(output(a.out.as_deref())?, &tables)
}

fn run_config(a: &RunArgs) -> Result<SimulationConfig> {
    let mut cfg: SimulationConfig = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => SimulationConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some((source, nulls)) = a.chain.source()? {
        cfg.chain = source;
        if let Some(n) = nulls {
            cfg.null_states = n;
        }
    }
    macro_rules! set {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag.clone() { cfg.$field = v; })*
        };
    }
    set!(
        d <- a.d,
        null_states <- a.null_states,
        psig <- a.psig,
        m <- a.m,
        epsilon <- a.epsilon,
        alpha <- a.alpha,
        lambda <- a.lambda,
        mu <- a.mu,
        n_reps <- a.reps,
        density_points <- a.density_points,
    );
    if a.w.is_some() {
        cfg.w = a.w;
    }
    cfg.redraw_eta |= a.redraw_eta;
    if a.serial {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn dump_posteriors(cfg: &SimulationConfig, path: &Path) -> Result<()> {
    let prepared = prepare(cfg)?;
    let mut rng = stream_rng(cfg.seed, Stream::Replication(0));
    let fresh;
    let eta = if cfg.redraw_eta {
        fresh = simulate_signal(&prepared.chain.spec, cfg.m, &mut rng)?;
        &fresh
    } else {
        &prepared.eta
    };
    let eps = cfg.epsilon[0];
    let x: Vec<f64> = eta
        .bits()
        .iter()
        .map(|&b| {
            eps * f64::from(b) + rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
        })
        .collect();
    let obs = Observations::new(x, eps)?;
    let post = posteriors(
        prepared
            .engine
            .logits(&obs, &NoiseModel::gaussian_additive()),
    );
    let p = p_values_one_sided(obs.x());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "eta", "x", "logit", "posterior", "p_value"])?;
    for t in 0..obs.len() {
        w.write_record(&[
            t.to_string(),
            eta.bits()[t].to_string(),
            obs.x()[t].to_string(),
            post.logits[t].to_string(),
            post.probs[t].to_string(),
            p[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = run_config(&a)?;
    let (out, paths) = run_to_dir(&cfg, &a.out)?;
    if let Some(path) = &a.dump_posteriors {
        dump_posteriors(&cfg, path)?;
    }
    let mut err = io::stderr().lock();
    for c in &out.summary.cells {
        writeln!(
            err,
            "epsilon {} alpha {}: FDP bbh {:.5} bh {:.5}, NTD bbh {:.2} bh {:.2}",
            c.epsilon, c.alpha, c.bbh.mean_fdp, c.bh.mean_fdp, c.bbh.mean_ntd, c.bh.mean_ntd
        )?;
    }
    for p in paths {
        writeln!(err, "wrote {}", p.display())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TestReport {
    procedure: Procedure,
    alpha: f64,
    m: usize,
    rejections: usize,
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fdp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ntd: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<depfdr::procedures::ConfusionCounts>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Domain(format!("no column named '{name}'")))
}

fn test(a: TestArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.input)?;
    let headers = reader.headers()?.clone();
    let vi = column(&headers, &a.column)?;
    let ti = a
        .truth
        .as_deref()
        .map(|t| column(&headers, t))
        .transpose()?;
    let (mut values, mut truth) = (Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("'{}' is not a number", &row[i])))
        };
        values.push(parse(vi)?);
        if let Some(i) = ti {
            truth.push(parse(i)? as u8);
        }
    }
    let decision: TestDecision = match a.procedure {
        Procedure::Bbh => bayes_bh(&values, a.alpha)?,
        Procedure::Bh => bh(&values, a.alpha)?,
    };
    let counts = match ti {
        Some(_) => Some(confusion(&decision, &BinarySignal::new(truth)?)?),
        None => None,
    };
    if let Some(path) = &a.decisions {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "value", "reject"])?;
        for (i, (v, r)) in values.iter().zip(&decision.reject).enumerate() {
            w.write_record(&[i.to_string(), v.to_string(), u8::from(*r).to_string()])?;
        }
        w.flush()?;
    }
    let report = TestReport {
        procedure: a.procedure,
        alpha: a.alpha,
        m: values.len(),
        rejections: decision.rejections,
        threshold: decision.threshold,
        fdp: counts.map(|c| c.fdp()),
        ntd: counts.map(|c| c.ntd()),
        counts,
    };
    write_summary(io::stdout().lock(), &report)
}

fn density(a: DensityArgs) -> Result<()> {
    let points = density_points(&read_records(&a.records)?, a.points)?;
    write_densities(output(a.out.as_deref())?, &points)
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
enum OracleNoise {
    GaussianAdditive,
    LogisticMultiplicative,
}

#[derive(Deserialize)]
struct OracleInstance {
    pi: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    null_states: Vec<usize>,
    x: Vec<f64>,
    epsilon: f64,
    #[serde(default = "default_noise")]
    noise: OracleNoise,
}

fn default_noise() -> OracleNoise {
    OracleNoise::GaussianAdditive
}

#[derive(Serialize)]
struct OracleReport {
    probs: Vec<f64>,
    log_evidence: f64,
    /// Largest gap to full path enumeration, when the instance is small enough.
    brute_force_max_diff: Option<f64>,
}

fn oracle_with<D: depfdr::cond_likelihood::LogDensity>(
    spec: &ParentChainSpec,
    obs: &Observations,
    noise: &NoiseModel<D>,
) -> Result<OracleReport> {
    let fb = forward_backward_posterior(spec, obs, noise)?;
    let brute_force_max_diff = if obs.len() <= MAX_PATH_SITES {
        let bf = brute_force_posterior(ExactPrior::Chain(spec), obs, noise)?;
        Some(
            fb.probs
                .iter()
                .zip(&bf.probs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(OracleReport {
        probs: fb.probs,
        log_evidence: fb.log_evidence,
        brute_force_max_diff,
    })
}

fn oracle(a: OracleArgs) -> Result<()> {
    let inst: OracleInstance = serde_json::from_str(&fs::read_to_string(&a.instance)?)?;
    let spec = ParentChainSpec::new(
        depfdr::matrix_ensembles::ProbVector::normalized(inst.pi)?,
        depfdr::matrix_ensembles::TransitionMatrix::from_rows_normalized(&inst.matrix)?,
        &zero_based(&inst.null_states)?,
    )?;
    let obs = Observations::new(inst.x, inst.epsilon)?;
    let report = match inst.noise {
        OracleNoise::GaussianAdditive => oracle_with(
            &spec,
            &obs,
            &NoiseModel::new(Interaction::Additive, StandardGaussian),
        )?,
        OracleNoise::LogisticMultiplicative => oracle_with(
            &spec,
            &obs,
            &NoiseModel::new(Interaction::Multiplicative, StandardLogistic),
        )?,
    };
    write_summary(io::stdout().lock(), &report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::SampleMatrix(a) => sample_matrix(a),
        Cmd::SimulateSignal(a) => simulate(a),
        Cmd::Run(a) => run(a),
        Cmd::Test(a) => test(a),
        Cmd::Density(a) => density(a),
        Cmd::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
