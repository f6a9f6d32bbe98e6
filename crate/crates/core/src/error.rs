use thiserror::Error;

/// Errors produced by the model, the stability analysis and the integrator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid state component `{name}` = {value}")]
    InvalidState { name: &'static str, value: f64 },

    #[error("no endemic equilibrium: R0 = {r0} <= 1")]
    NoEndemicEquilibrium { r0: f64 },

    #[error("arccos argument {value} lies outside [-1, 1]")]
    ArccosOutOfRange { value: f64 },

    #[error("delay-length bound not applicable: {reason}")]
    BoundNotApplicable { reason: String },

    #[error("degenerate computation: {0}")]
    Degenerate(String),

    #[error("singular {size}x{size} linear system (pivot {pivot:e})")]
    Singular { size: usize, pivot: f64 },

    #[error("step size {dt} exceeds tau/16 = {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("integration blew up at t = {t}: component {component} = {value:e}")]
    BlowUp {
        t: f64,
        component: usize,
        value: f64,
    },

    #[error("negative state at t = {t}: component {component} = {value:e}")]
    NegativeState {
        t: f64,
        component: usize,
        value: f64,
    },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid patient series: {0}")]
    InvalidSeries(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
