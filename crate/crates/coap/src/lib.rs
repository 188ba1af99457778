//! Covariate-augmented overdispersed Poisson factor model (COAP).
//!
//! Fits high-dimensional count matrices with a log-linear latent structure
//! `y_ij = z_i' beta_j + h_i' b_j + eps_ij` by a variational EM algorithm
//! with explicit per-parameter updates, selects the number of factors and
//! the coefficient rank by singular-value ratios, and ships a seeded
//! simulation harness plus the evaluation metrics used to benchmark it.

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rank;
pub mod simulate;
pub mod vem;

pub use error::{CoapError, Result};
pub use model::{
    linear_predictor, validate_inputs, CountDataset, FitConfig, FitResult, ModelParams,
    VariationalParams,
};
pub use vem::fit;
