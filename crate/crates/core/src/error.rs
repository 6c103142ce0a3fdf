use thiserror::Error;

pub type Result<T> = std::result::Result<T, EmdError>;

#[derive(Debug, Error)]
pub enum EmdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0} (supported: 1..=8)")]
    UnsupportedDimension(usize),

    #[error("non-finite coordinate in {0}")]
    NonFinite(String),

    #[error("degenerate object at index {index} on side {side}")]
    DegenerateObject { side: char, index: usize },

    #[error("degenerate simplex (measure {0:e})")]
    DegenerateSimplex(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("unbalanced mass: P has {p}, S has {s} (relative imbalance {rel:e})")]
    UnbalancedMass { p: f64, s: f64, rel: f64 },

    #[error("unbalanced transportation instance: supplies {supply}, demands {demand}")]
    UnbalancedInstance { supply: f64, demand: f64 },

    #[error("optimality certificate failed: {0}")]
    Certificate(String),

    #[error("subdivision floor reached: piece of size {0:e}")]
    SubdivisionFloor(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported pair kind: {0}")]
    UnsupportedPair(String),

    #[error("node-count guard exceeded: {nodes} > {limit}")]
    NodeGuard { nodes: usize, limit: usize },

    #[error("mass drift of {drift:e} after {stage}")]
    MassDrift { stage: String, drift: f64 },

    #[error("plan does not match flow: {0}")]
    PlanMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
