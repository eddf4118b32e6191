use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is numerically singular: {0}")]
    Singular(&'static str),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("pair (A, C) is not detectable: {0}")]
    Undetectable(String),

    #[error("candidate {candidate} lies outside the range of E[Z]; no finite rho satisfies the domination constraint")]
    UnreachableCandidate { candidate: usize },

    #[error("sample size {n_s} is infeasible (rho* = {rho_star:.6}); need n_s >= {min_n_s}")]
    SampleSizeInfeasible {
        n_s: usize,
        rho_star: f64,
        min_n_s: usize,
    },

    #[error("rho = {rho:.6} is below the minimal domination ratio {rho_star:.6}; binding candidate {binding_candidate}")]
    RhoInfeasible {
        rho: f64,
        rho_star: f64,
        binding_candidate: usize,
    },

    #[error("rejection budget of {attempts} draws exhausted (alpha = {alpha:.6}, expected draws <= {expected_draws:.3})")]
    RejectionBudget {
        attempts: u64,
        alpha: f64,
        expected_draws: f64,
    },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("no candidate yields a detectable pair in the first greedy round")]
    UndetectablePool,

    #[error("instance generation failed after {0} attempts")]
    Generation(usize),

    #[error("every grid point failed: {0}")]
    GridExhausted(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
