use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel `{label}` has no positive root in (0, {x_max}]")]
    NoPositiveRoot { label: String, x_max: f64 },

    #[error("particle {index} diverged at t = {time} (position {value})")]
    Divergence { index: usize, time: f64, value: f64 },

    #[error("masses ({m1}, {m2}) are outside the admissibility window: {reason}")]
    Inadmissible { m1: f64, m2: f64, reason: String },

    #[error("spike state is inadmissible: widths {widths:?} at centers {centers:?}")]
    InadmissibleSpikes { centers: Vec<f64>, widths: Vec<f64> },

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("tridiagonal system is not diagonally dominant at row {row}")]
    NotDiagonallyDominant { row: usize },

    #[error("density became negative ({value:e}) in cell {cell} at t = {time}")]
    Negativity { cell: usize, value: f64, time: f64 },

    #[error("grid does not hold the spike tails: truncated relative mass {truncated:e} exceeds {limit:e}")]
    GridTooSmall { truncated: f64, limit: f64 },

    #[error("no particle falls inside the histogram window [{lo}, {hi}]")]
    EmptyHistogram { lo: f64, hi: f64 },

    #[error("steady state not reached by t = {time} (residual {residual:e})")]
    NotConverged { time: f64, residual: f64 },

    #[error("adaptive step size underflow at t = {time} (d = {d:e}, dt = {dt:e})")]
    StepUnderflow { time: f64, d: f64, dt: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config file not found: {}", .0.display())]
    ConfigMissing(PathBuf),

    #[error("config schema violation: {0}")]
    ConfigSchema(String),

    #[error("inconsistent config: {0}")]
    ConfigInconsistent(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Configuration problems map to a distinct process exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigMissing(_)
                | Error::ConfigSchema(_)
                | Error::ConfigInconsistent(_)
                | Error::UnknownExperiment(_)
        )
    }
}
