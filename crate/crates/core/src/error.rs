use thiserror::Error;

pub type Result<T, E = KamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KamError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("trajectory blew up at step {step} (|x| = {norm:.3e})")]
    BlowUp { step: usize, norm: f64 },
    #[error("non-finite Lagrangian value at step {0}")]
    Evaluation(usize),
    #[error("convexity violation: Legendre ascent failed at x = {x:?} (|q - D_uL| = {residual:.3e})")]
    ConvexityViolation { x: Vec<f64>, residual: f64 },
    #[error("endpoint infeasible: best gap {best_gap:.3e} after all restarts")]
    InfeasibleEndpoint { best_gap: f64 },
    #[error("trajectory left the measure support ball (|x| = {norm:.3e} > R = {radius:.3e})")]
    SupportViolation { norm: f64, radius: f64 },
    #[error("linear program internal error: {0}")]
    LinearProgram(String),
    #[error("fixed point iteration did not converge after {iterations} sweeps (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("probe point {0:?} is outside the grid interior")]
    OutOfBox(Vec<f64>),
    #[error("all horizons infeasible for barrier between {x:?} and {y:?}")]
    BarrierInfeasible { x: Vec<f64>, y: Vec<f64> },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
