use thiserror::Error;

/// Errors raised by the models, integrators and metrics.
///
/// Numerical payloads are stored as `f64` whatever the scalar type of the
/// computation, so the error stays non-generic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("w(t) is singular at t = {t}: sigma * u = {sigma_u} >= 1")]
    SingularControlWeight { t: f64, sigma_u: f64 },

    #[error("volume capacity collapsed: 1 + epsilon - theta = {gap} <= 0 (theta = {theta})")]
    CapacityCollapse { theta: f64, gap: f64 },

    #[error("finite-difference measurement needs a previous sample")]
    MissingHistory,

    #[error("non-finite derivative in component `{component}` at t = {t}")]
    NonFinite { component: String, t: f64 },

    #[error("component `{component}` left its box by {amount:e} at t = {t} (limit {limit:e})")]
    Overshoot {
        component: String,
        t: f64,
        amount: f64,
        limit: f64,
    },

    #[error("time step {dt} exceeds the diffusion stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("observer gain {gain} exceeds the explicit-step cap 1/(10 dt) = {cap}")]
    GainCap { gain: f64, cap: f64 },

    #[error("invalid time span: t0 = {t0}, t1 = {t1}, dt = {dt}")]
    InvalidSpan { t0: f64, t1: f64, dt: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("not enough data: need at least {needed} usable samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
