use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid crystal spec: {0}")]
    InvalidSpec(String),

    #[error("array of {voxels} voxels exceeds the direct-sum cap of {cap}")]
    OracleTooLarge { voxels: usize, cap: usize },

    #[error("negative intensity {value} at voxel {index}")]
    NegativeIntensity { index: usize, value: f64 },

    #[error("oversampling {oversampling} is too small to separate the holographic copies (need >= {required})")]
    InsufficientOversampling { oversampling: usize, required: usize },

    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),

    #[error("intensity is identically zero")]
    ZeroIntensity,

    #[error("support collapsed to an empty mask at iteration {iteration}")]
    SupportCollapse { iteration: usize },

    #[error("non-finite values at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("volume file error: {0}")]
    VolumeFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
