use thiserror::Error;

/// Errors raised by input validation and the solver.
#[derive(Debug, Error)]
pub enum CoapError {
    #[error("entry ({row}, {col}) of the count matrix is not a nonnegative integer: {value}")]
    NonIntegerCount { row: usize, col: usize, value: f64 },
    #[error("offset a[{index}] = {value} is not positive")]
    NonPositiveOffset { index: usize, value: f64 },
    #[error("covariate matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficientCovariates { rank: usize, cols: usize },
    #[error("coefficient rank r = {r} exceeds min(p, d) = {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("number of factors q = {q} must be smaller than min(n, p) = {max}")]
    FactorCountTooLarge { q: usize, max: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("exponent overflow in the E-step even after clipping")]
    Overflow,
    #[error("variational variance sigma2[{row}, {col}] = {value} is not positive")]
    NonPositiveVariance { row: usize, col: usize, value: f64 },
    #[error("Gram matrix {context} is numerically singular")]
    SingularGram { context: String },
    #[error("Z'Z is numerically singular")]
    SingularCovariateGram,
    #[error("Sigma-tilde of the joint beta/varsigma update is not positive definite")]
    SingularSigmaTilde,
    #[error("ELBO became non-finite at iteration {iteration} (value {value})")]
    NonFiniteElbo { iteration: usize, value: f64 },
    #[error("residual of the factor draw on Z has rank below q0 after resampling")]
    DegenerateResidual,
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("estimated factor matrix is rank deficient")]
    RankDeficientEstimate,
    #[error("invalid scenario specification: {context}")]
    InvalidSpec { context: String },
}

pub type Result<T> = std::result::Result<T, CoapError>;
