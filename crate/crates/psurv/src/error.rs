use thiserror::Error;

/// Errors surfaced by the estimation engines and data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("model `{model}` failed: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("perfect separation detected along {direction}")]
    Separation { direction: String },
    #[error("design matrix is rank deficient (pivot {pivot} ~ 0)")]
    RankDeficient { pivot: usize },
    #[error("{0}")]
    Estimation(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach the identity of the nuisance model a fitting error came from.
    pub fn for_model(self, model: impl Into<String>) -> Error {
        Error::Model {
            model: model.into(),
            source: Box::new(self),
        }
    }
}
