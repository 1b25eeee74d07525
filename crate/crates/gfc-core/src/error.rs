use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window spec: {0}")]
    Window(String),
    #[error("query at time {t} rejected: {bound}")]
    OutOfRange { t: usize, bound: String },
    #[error("mapper: {0}")]
    Mapper(String),
    #[error("panel: {0}")]
    Panel(String),
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("dgp: {0}")]
    Dgp(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("unestimable {factor} at cell {cell:?}")]
    Unestimable { factor: String, cell: Vec<u32> },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("overlap refused: {violations} of {checked} histories off the observed support")]
    OverlapRefused { violations: usize, checked: usize },
    #[error("policy: {0}")]
    Policy(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for problems with inputs or configuration rather than with the data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Window(_)
                | Error::OutOfRange { .. }
                | Error::Mapper(_)
                | Error::Panel(_)
                | Error::Csv { .. }
                | Error::Dgp(_)
                | Error::Policy(_)
                | Error::Scenario(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
