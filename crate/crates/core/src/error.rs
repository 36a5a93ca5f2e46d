use crate::nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("{format} line {line}: {reason}")]
    Parse {
        format: &'static str,
        line: usize,
        reason: String,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("missing metrics for layer {layer} variant {variant}")]
    MissingMetrics { layer: usize, variant: usize },
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("enumeration of {combinations} selections exceeds the limit of {limit}")]
    TooLarge { combinations: f64, limit: f64 },
    #[error("unknown DAG node `{0}`")]
    UnknownNode(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(format: &'static str, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            format,
            line,
            reason: reason.into(),
        }
    }
}
