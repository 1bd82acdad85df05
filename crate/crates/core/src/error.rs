use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Loss weights and the posterior are undefined where β²_{t-1} = 0.
    #[error("degenerate diffusion step t={step}: accumulated variance of the previous step is zero")]
    DegenerateStep { step: usize },

    #[error("ill-conditioned step t={step}: alpha_bar={alpha_bar:e} is too small to invert")]
    IllConditionedStep { step: usize, alpha_bar: f64 },

    #[error("step t={step} outside 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("scatterer {index} rejected: {reason}")]
    ScattererOutOfCoverage { index: usize, reason: String },

    #[error("degenerate observation geometry (rank {rank}): velocity along {null_direction:?} is unobservable")]
    DegenerateGeometry { rank: usize, null_direction: [f64; 3] },

    #[error("RANSAC consensus failure: no hypothesis reached 3 inliers")]
    ConsensusFailure,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("exact EMD limited to {cap} points (got {size}); use approximate mode")]
    SizeCap { size: usize, cap: usize },

    #[error("denoiser failed: {0}")]
    Denoiser(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
