use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("spectral configuration mismatch")]
    ConfigMismatch,

    #[error("density grid is not normalized (mass {mass})")]
    Unnormalized { mass: f64 },

    #[error("density grid has a negative or non-finite cell at index {index}")]
    InvalidDensity { index: usize },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("trajectory has zero duration")]
    ZeroDuration,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point {index} lies outside the unit workspace")]
    PointOutOfRange { index: usize },

    #[error("empty command")]
    EmptyCommand,

    #[error("costate diverged at horizon step {step}")]
    Divergence { step: usize },

    #[error("planner diverged for agent {agent} at tick {tick}: {source}")]
    PlannerDiverged {
        agent: usize,
        tick: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
