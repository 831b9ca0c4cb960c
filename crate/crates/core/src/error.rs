use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in a dataset a schema violation was found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Location {
    pub face: Option<String>,
    pub landmark: Option<usize>,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.face, self.landmark) {
            (Some(face), Some(lm)) => write!(f, "face '{face}', landmark {lm}"),
            (Some(face), None) => write!(f, "face '{face}'"),
            (None, Some(lm)) => write!(f, "landmark {lm}"),
            (None, None) => write!(f, "file"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NonPositiveDefinite,

    #[error("heatmap dimensions must be at least 1x1 (got {width}x{height})")]
    InvalidDimensions { width: usize, height: usize },

    #[error("heatmap has no strictly positive pixel")]
    AllNonPositive,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("loss is not differentiable here (Laplacian cusp at zero residual)")]
    NonDifferentiablePoint,

    #[error("degenerate sample set: {0}")]
    Degenerate(String),

    #[error("inter-ocular normalizer needs visible landmarks 36 and 45 of a 68-point face")]
    MissingEyeCorners,

    #[error("no visible landmarks")]
    NoVisibleLandmarks,

    #[error("normalizer is zero")]
    ZeroNormalizer,

    #[error("empty input")]
    EmptyInput,

    #[error("no samples left after applying class filter")]
    EmptyAfterFilter,

    #[error("bounding box required for normalized uncertainty")]
    MissingBbox,

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("schema error at {at}: {msg}")]
    Schema { at: Location, msg: String },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(face: Option<&str>, landmark: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Schema {
            at: Location {
                face: face.map(str::to_owned),
                landmark,
            },
            msg: msg.into(),
        }
    }
}
