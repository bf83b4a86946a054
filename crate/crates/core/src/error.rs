use thiserror::Error;

use crate::linalg::Vec3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid scaling: {0}")]
    InvalidScaling(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point {point:?} lies outside the field domain")]
    OutOfDomain { point: Vec3 },
    #[error("trajectory left the domain at t = {time} (x = {point:?})")]
    DomainExit { time: f64, point: Vec3 },
    #[error("time step {dt} exceeds the gyro-resolution limit {limit}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("gyrophase undefined: perpendicular speed {v_perp} is below {threshold}")]
    GyrophaseUndefined { v_perp: f64, threshold: f64 },
    #[error("magnetic field vanishes at {point:?}")]
    VanishingField { point: Vec3 },
    #[error("singular jacobian at {point:?}")]
    SingularJacobian { point: Vec<f64> },
    #[error("gyro-frequency coefficient {omega} is not positive")]
    NonPositiveOmega { omega: f64 },
    #[error("perpendicular speed {v_perp} does not exceed the boundary level {nu}")]
    BelowBoundary { v_perp: f64, nu: f64 },
    #[error("series order {0} is not supported (maximum 2)")]
    UnsupportedOrder(usize),
    #[error("bracket residual {residual:e} exceeds tolerance {tolerance:e} for {pair}")]
    BracketResidual {
        pair: String,
        residual: f64,
        tolerance: f64,
    },
    #[error("degenerate gyro-frequency: |dH/dk| = {value:e}")]
    DegenerateGyrofrequency { value: f64 },
    #[error("scenario `{scenario}` does not support stage `{stage}`")]
    UnsupportedScenario { scenario: String, stage: String },
    #[error("iterative inversion did not converge (residual {residual:e})")]
    InversionFailed { residual: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
