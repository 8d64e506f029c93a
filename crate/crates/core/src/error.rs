use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("degenerate sample, bandwidth undefined")]
    DegenerateSample,

    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),

    #[error("matrix not symmetric: max asymmetry {0:e} exceeds tolerance")]
    NotSymmetric(f64),

    #[error("singular system with alpha = 0")]
    SingularSystem,

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("parameter {name} = {value} outside required range {range}")]
    ParameterRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("grid size {m} is not a perfect {d}-th power")]
    GridSize { m: usize, d: usize },

    #[error("reference box is empty or inverted")]
    EmptyBox,

    #[error("mass non-positive, cannot normalize")]
    NonPositiveMass,

    #[error("all mixture weights non-positive")]
    NoPositiveWeights,

    #[error("kernel mismatch between model and embedding")]
    KernelMismatch,

    #[error("importance weights are only supported by the representer method")]
    WeightsRequireRepresenter,

    #[error("empty group in grouped data")]
    EmptyGroup,

    #[error("grouping does not partition the data rows")]
    InvalidGrouping,

    #[error("linear algebra backend error: {0}")]
    Backend(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, Error>;
