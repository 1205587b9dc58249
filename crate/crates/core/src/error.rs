use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("NaN in input vector")]
    NaN,
    #[error("temperature undefined: gap floor phi is zero (configure delta_min)")]
    ZeroGap,
    #[error("epsilon-net too large: resolution m = {required_m} gives {points} points (cap {cap})")]
    NetTooLarge {
        required_m: usize,
        points: f64,
        cap: usize,
    },
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("linear program is infeasible")]
    Infeasible { certificate: Vec<f64> },
    #[error("infeasible dispatch on day {day} step {step}; certificate {certificate:?}")]
    Dispatch { day: usize, step: usize, certificate: Vec<f64> },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex stalled after {0} pivots")]
    PivotLimit(usize),
    #[error("mean-field mass drift {0:.3e} exceeds 1e-10")]
    MassDrift(f64),
    #[error("state space too large: {0}")]
    TooLarge(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
