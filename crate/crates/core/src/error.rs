use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("unknown label {0:?}")]
    Classification(String),

    #[error("degenerate feature {0:?}: zero variance")]
    DegenerateFeature(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range { what: &'static str, value: i64, lo: i64, hi: i64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("balance error: {0}")]
    Balance(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Short machine-readable code for service error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Data { .. } => "data",
            Error::Classification(_) => "classification",
            Error::DegenerateFeature(_) => "degenerate_feature",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Range { .. } => "range",
            Error::Argument(_) => "argument",
            Error::Numeric(_) => "numeric",
            Error::Stratification(_) => "stratification",
            Error::Balance(_) => "balance",
            Error::Divergence { .. } => "divergence",
            Error::Lookup(_) => "lookup",
            Error::Stage { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
