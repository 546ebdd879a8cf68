use thiserror::Error;

pub type Result<T, E = CamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CamError {
    #[error("not-found: no node with id `{0}`")]
    NodeNotFound(String),

    #[error("zero-weight edge on the path from `{0}` to the root")]
    ZeroWeightPath(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unfittable column `{0}`: every value is missing")]
    UnfittableColumn(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("misaligned instance: {0}")]
    Misaligned(String),

    #[error("missing-meaning: no embedding for node `{0}`")]
    MissingMeaning(String),

    #[error("degenerate vector for `{0}` (zero norm or non-finite)")]
    DegenerateVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("label map references unknown node `{0}`")]
    UnknownLabelNode(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CamError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CamError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable code, shared by the CLI, the HTTP service and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            CamError::NodeNotFound(_) => "not-found",
            CamError::ZeroWeightPath(_) => "zero-weight-path",
            CamError::Schema(_) | CamError::SchemaVersion { .. } | CamError::Json(_) => "schema",
            CamError::InvalidModel(_) => "invalid-model",
            CamError::UnfittableColumn(_) => "unfittable-column",
            CamError::Label(_) => "label",
            CamError::Dataset(_) | CamError::Csv(_) => "dataset",
            CamError::Misaligned(_) => "misaligned",
            CamError::MissingMeaning(_) => "missing-meaning",
            CamError::DegenerateVector(_) => "degenerate-vector",
            CamError::Dimension { .. } => "dimension",
            CamError::UnknownLabelNode(_) => "unknown-label-node",
            CamError::UndefinedMetric(_) => "undefined-metric",
            CamError::Structure(_) => "structure",
            CamError::Config(_) => "config",
            CamError::Io { .. } => "io",
        }
    }
}
