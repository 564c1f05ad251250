use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("trajectory left the domain at t={time} (state {state:?})")]
    DomainExit { time: f64, state: Vec<f64> },

    #[error("integrator produced a non-finite value near t={time}")]
    NonFinite { time: f64 },

    #[error("integrator step budget exhausted at t={time}")]
    StepLimit { time: f64 },

    #[error("integrator step size underflow at t={time}")]
    StepSizeUnderflow { time: f64 },

    #[error("no event before horizon {horizon} (cumulative hazard {cumulative_hazard})")]
    HorizonExceeded { horizon: f64, cumulative_hazard: f64 },

    #[error("thinning requires an upper bound on the hazard")]
    MissingBound,

    #[error("integral diverges at the left endpoint (tail exponent {exponent})")]
    DivergentIntegral { exponent: f64 },

    #[error("quadrature failed on [{lower}, {upper}]: {detail}")]
    QuadratureFailure { lower: f64, upper: f64, detail: String },

    #[error("no sign change on [{lower}, {upper}]")]
    NoBracket { lower: f64, upper: f64 },

    #[error("invalid parameter for {model}: {constraint}")]
    InvalidParam { model: String, constraint: String },

    #[error("Allee flow has no interior stationary points x1 < x2")]
    NoInteriorRoots,

    #[error("jump budget of {budget} exceeded at t={time}")]
    JumpBudgetExceeded { budget: usize, time: f64 },

    #[error("population exceeded {cap} cells at t={time}")]
    PopulationBlowup { cap: usize, time: f64 },

    #[error("derivative {which} vanishes (value {value})")]
    DerivativeDegenerate { which: String, value: f64 },

    #[error("CFL condition violated: {quantity}={value} exceeds {limit}")]
    CflViolation { quantity: String, value: f64, limit: f64 },

    #[error("grid is not dyadic-aligned: {0}")]
    GridNotDyadic(String),

    #[error("time step {dt} does not divide the age-cell width {dy}")]
    DtMisaligned { dt: f64, dy: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty sample")]
    EmptySample,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

impl Error {
    pub(crate) fn invalid(model: &str, constraint: impl Into<String>) -> Self {
        Error::InvalidParam { model: model.to_string(), constraint: constraint.into() }
    }
}
