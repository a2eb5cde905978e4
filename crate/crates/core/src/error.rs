use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid entry ({row}, {col}): {reason}")]
    InvalidEntry { row: usize, col: usize, reason: String },

    #[error("entry ({row}, {col}) appears more than once")]
    DuplicateEntry { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design is disconnected into {} components: {}", .components.len(), describe_components(.components))]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("row {0} has no observed entries")]
    EmptyRow(usize),

    #[error("column {0} has no observed entries")]
    EmptyColumn(usize),

    #[error("observed values are inconsistent with a row/column decomposition (cycle residual {residual:e})")]
    InconsistentValues { residual: f64 },

    #[error("log-likelihood became non-finite at sweep {sweep}; reduce the learning rate")]
    NonFinite { sweep: usize },

    #[error("variance aggregate for {0} is zero but the form puts weight on it")]
    ZeroVariance(String),

    #[error("linear form has no entry-weight origin")]
    MissingEntryWeights,

    #[error("problem too large for the dense exact variance solve (N + J = {size}, limit {limit})")]
    SizeGuard { size: usize, limit: usize },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("study failed: {excluded} of {total} replications excluded")]
    StudyFailed { excluded: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| {
            let shown: Vec<String> = c.iter().take(6).map(|n| n.to_string()).collect();
            if c.len() > 6 {
                format!("{{{}, ... ({} nodes)}}", shown.join(", "), c.len())
            } else {
                format!("{{{}}}", shown.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Format(_) => 2,
            Error::Disconnected { .. }
            | Error::EmptyRow(_)
            | Error::EmptyColumn(_)
            | Error::InconsistentValues { .. } => 3,
            Error::NonFinite { .. } | Error::ZeroVariance(_) | Error::SingularSystem | Error::StudyFailed { .. } => 4,
            _ => 1,
        }
    }
}
