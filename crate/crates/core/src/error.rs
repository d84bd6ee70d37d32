use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular jacobian at {0:?}")]
    SingularJacobian(Vec<f64>),
    #[error("inversion did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),
    #[error("hessian not positive definite, eigenvalues {0:?}")]
    HessianNotPD(Vec<f64>),
    #[error("point outside chart box: {0:?}")]
    OutOfChart(Vec<f64>),
    #[error("point outside covered region (radius {radius}, outer {outer})")]
    OutsideCoveredRegion { radius: f64, outer: f64 },
    #[error("precision loss in Gram-Schmidt at function {index}")]
    PrecisionLoss { index: usize },
    #[error("point outside basis domain in dimension {dim}: {value}")]
    OutOfDomain { dim: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ill-conditioned core solve in sweep {sweep}")]
    IllConditionedSolve { sweep: usize },
    #[error("surrogate not positive at {0} sample points")]
    NonPositiveSurrogate(usize),
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: Box<Error> },
    #[error("negative mass {mass} in layer {layer}")]
    NegativeLayerMass { layer: usize, mass: f64 },
    #[error("moment order {order} exceeds cap {cap}")]
    CapExceeded { order: usize, cap: usize },
    #[error("density evaluation failed at {point:?}: {reason}")]
    Evaluation { point: Vec<f64>, reason: String },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
