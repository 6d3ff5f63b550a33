use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("group element is singular")]
    SingularGroupElement,
    #[error("logarithm undefined: {0}")]
    LogBranch(String),
    #[error("point is not on the manifold: {0}")]
    OffManifold(String),
    #[error("unsupported resolution: {0}")]
    UnsupportedResolution(String),
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("cannot resample a function that is not band-limited")]
    UnsupportedResample,
    #[error("probe failed: {0}")]
    ProbeFailure(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("insufficient permutations: n_perm must be at least 1")]
    InsufficientPermutations,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
