//! Wishart stochastic volatility model: closed-form Laplace transforms,
//! long-time large deviations, asymptotic basket smiles and an
//! asymptotically optimal importance sampler for basket options.

pub mod cli;
pub mod error;
pub mod impsamp;
pub mod laplace;
pub mod ldp;
pub mod matfun;
pub mod model;
pub mod optimize;
pub mod sim;
pub mod smile;
pub mod stats;

pub use error::{Error, Result};
