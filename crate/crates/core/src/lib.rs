pub mod cond_likelihood;
pub mod error;
pub mod exact_oracle;
pub mod hmm_signal;
pub mod matrix_ensembles;
pub mod procedures;
pub mod sim_harness;

pub use error::{Error, Result};
