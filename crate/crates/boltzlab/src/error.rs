use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("density has {found} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, found: usize },

    #[error("density value at node {index} is {value}, expected a finite nonnegative number")]
    InvalidValue { index: usize, value: f64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, target {target:e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("kernel K is undefined on the diagonal v = v'")]
    Diagonal,

    #[error("diffusion width exceeds box: eps*tau = {spread} > (L/3)^2 = {limit}")]
    DiffusionTooWide { spread: f64, limit: f64 },

    #[error("time step too large: B*m*dt = {value} must stay below ln 2")]
    StepTooLarge { value: f64 },

    #[error("fixed-point iteration stalled after {iterations} iterations, last residual {residual:e}")]
    FixedPoint { iterations: usize, residual: f64 },

    #[error("Duhamel iterates lost monotonicity at node {index} (drop {drop:e})")]
    Monotonicity { index: usize, drop: f64 },

    #[error("p = {p} lies outside the admissible interval ({lower}, {upper})")]
    InadmissibleExponent { p: f64, lower: f64, upper: f64 },

    #[error("time stamps must be strictly increasing (violated at sample {0})")]
    NonMonotoneTimes(usize),

    #[error("series of {len} samples is shorter than one window")]
    SeriesTooShort { len: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
