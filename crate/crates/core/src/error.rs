use thiserror::Error;

/// Errors produced by the adaptive testing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ability estimation did not converge after {iterations} iterations (last iterate {last})")]
    EstimationFailed { last: f64, iterations: usize },

    #[error("at response position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("selection exhausted in section {section}: {reason}")]
    SelectionExhausted { section: u32, reason: String },

    #[error("unknown section {0}")]
    UnknownSection(u32),

    #[error("unknown item {0}")]
    UnknownItem(u32),

    #[error("duplicate item id {0}")]
    DuplicateItem(u32),

    #[error("duplicate response for examinee {examinee_id}, item {item_id}")]
    DuplicateResponse { examinee_id: u64, item_id: u32 },

    #[error("session state: {0}")]
    SessionState(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("calibration did not converge after {sweeps} sweeps (max parameter change {max_change:e}, max gradient {max_gradient:e})")]
    CalibrationFailed {
        sweeps: usize,
        max_change: f64,
        max_gradient: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_position(self, position: usize) -> Self {
        Error::AtPosition {
            position,
            source: Box::new(self),
        }
    }
}
