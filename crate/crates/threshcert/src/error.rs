use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("non-binary label {label:?} at row {row}")]
    NonBinaryLabel { row: usize, label: String },

    #[error("conflicting labels for patient {patient_id} (row {row})")]
    ConflictingLabels { patient_id: String, row: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class-conditional CDF undefined for label {label}")]
    SingleClass { label: u8 },

    #[error("fewer than 2 distinct score values for midpoint grid")]
    DegenerateGrid,

    #[error("class-degenerate bootstrap: resample lost a class after {attempts} redraws")]
    DegenerateBootstrap { attempts: usize },

    #[error("constraint infeasible on grid: {constraint}; best achievable {best:.6}")]
    InfeasibleConstraint { constraint: String, best: f64 },

    #[error("all candidates failed selection: {0}")]
    AllCandidatesFailed(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("threshold {t} is not on the curve grid")]
    OffGridThreshold { t: f64 },
}
