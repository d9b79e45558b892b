use depfdr::cond_likelihood::{log_odds, posteriors, LocalizedEngine, NoiseModel, Observations};
use depfdr::exact_oracle::forward_backward_posterior;
use depfdr::hmm_signal::{analytic_moments, simulate_signal};
use depfdr::sim_harness::output::density_points;
use depfdr::sim_harness::{
    build_chain, run_experiment, stream_rng, ChainSource, SimulationConfig, Stream,
};
use depfdr::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_PROFILE_SITES: usize = 400;
const MAX_DEMO_SITES: usize = 50_000;
const MAX_DEMO_REPS: usize = 200;

fn chain_source(preset: &str) -> ChainSource {
    if preset.is_empty() || preset == "sampled" {
        ChainSource::Sampled
    } else {
        ChainSource::Preset {
            name: preset.to_string(),
        }
    }
}

fn to_json(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

pub fn sample_matrix_json(d: usize, psig: f64, lambda: f64, mu: f64, seed: u64) -> Result<String> {
    let cfg = SimulationConfig {
        d,
        null_states: vec![1, 2],
        psig,
        lambda,
        mu,
        seed,
        max_attempts: 20_000,
        ..SimulationConfig::default()
    };
    cfg.validate()?;
    to_json(&build_chain(&cfg)?.report())
}

#[derive(Serialize)]
struct Profile {
    eta: Vec<u8>,
    x: Vec<f64>,
    approx: Vec<f64>,
    exact: Vec<f64>,
    max_logit_error: f64,
}

/// Second-order posteriors with exact windowed moments next to the exact
/// forward-backward posteriors on one simulated sequence.
pub fn posterior_profile_json(
    preset: &str,
    m: usize,
    w: usize,
    epsilon: f64,
    seed: u64,
) -> Result<String> {
    let m = m.clamp(2 * w + 2, MAX_PROFILE_SITES);
    let cfg = SimulationConfig {
        chain: chain_source(preset),
        lambda: 0.5,
        mu: 0.1,
        seed,
        max_attempts: 20_000,
        ..SimulationConfig::default()
    };
    let chain = build_chain(&cfg)?;
    let moments = analytic_moments(&chain.spec, w)?;
    let engine = LocalizedEngine::with_log_prior_odds(&moments, log_odds(chain.spec.psig()));
    let mut rng = stream_rng(seed, Stream::Test);
    let eta = simulate_signal(&chain.spec, m, &mut rng)?;
    let noise = NoiseModel::gaussian_additive();
    let x: Vec<f64> = eta
        .bits()
        .iter()
        .map(|&b| {
            noise.observe(
                epsilon * f64::from(b),
                rand::Rng::sample(&mut rng, rand_distr::StandardNormal),
            )
        })
        .collect();
    let obs = Observations::new(x, epsilon)?;
    let approx = posteriors(engine.logits(&obs, &noise));
    let exact = forward_backward_posterior(&chain.spec, &obs, &noise)?;
    let max_logit_error = approx
        .logits
        .iter()
        .zip(&exact.probs)
        .map(|(r, &p)| (r - log_odds(p)).abs())
        .fold(0.0, f64::max);
    to_json(&Profile {
        eta: eta.bits().to_vec(),
        x: obs.x().to_vec(),
        approx: approx.probs,
        exact: exact.probs,
        max_logit_error,
    })
}

#[derive(Serialize)]
struct Comparison {
    summary: depfdr::sim_harness::ExperimentSummary,
    densities: Vec<depfdr::sim_harness::output::DensityPoint>,
}

/// A reduced replication experiment with density curves.
pub fn compare_procedures_json(
    preset: &str,
    m: usize,
    epsilon: f64,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<String> {
    let cfg = SimulationConfig {
        chain: chain_source(preset),
        lambda: 0.5,
        mu: 0.1,
        m: m.min(MAX_DEMO_SITES),
        epsilon: vec![epsilon],
        alpha: vec![alpha],
        n_reps: reps.clamp(2, MAX_DEMO_REPS),
        seed,
        max_attempts: 20_000,
        parallel: false,
        ..SimulationConfig::default()
    };
    let out = run_experiment(&cfg)?;
    let densities = density_points(&out.records, 128)?;
    to_json(&Comparison {
        summary: out.summary,
        densities,
    })
}

#[wasm_bindgen]
pub fn sample_matrix(
    d: usize,
    psig: f64,
    lambda: f64,
    mu: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(sample_matrix_json(d, psig, lambda, mu, u64::from(seed)))
}

#[wasm_bindgen]
pub fn posterior_profile(
    preset: &str,
    m: usize,
    w: usize,
    epsilon: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(posterior_profile_json(
        preset,
        m,
        w,
        epsilon,
        u64::from(seed),
    ))
}

#[wasm_bindgen]
pub fn compare_procedures(
    preset: &str,
    m: usize,
    epsilon: f64,
    alpha: f64,
    reps: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(compare_procedures_json(
        preset,
        m,
        epsilon,
        alpha,
        reps,
        u64::from(seed),
    ))
}
