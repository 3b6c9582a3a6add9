use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate observation for subject {subject}, feature {feature}, time {time}")]
    DuplicateObservation {
        subject: String,
        feature: String,
        time: f64,
    },
    #[error("subject {subject} at time {time} has {found} of {expected} features")]
    IncompleteFeatures {
        subject: String,
        time: f64,
        found: usize,
        expected: usize,
    },
    #[error("timestamp {0} lies outside [0, 1]; enable rescaling to map times onto [0, 1]")]
    TimestampOutOfRange(f64),
    #[error("timestamp {0} is not finite")]
    NonFiniteTimestamp(f64),
    #[error("value {0} is not finite")]
    NonFiniteValue(f64),
    #[error("tensor has no observations")]
    EmptyTensor,
    #[error("subject {0} has no observations")]
    EmptySubject(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("all observations are zero; relative loss is undefined")]
    ZeroData,
    #[error("kernel argument {0} lies outside [0, 1]")]
    KernelDomain(f64),
    #[error("{loss} loss undefined at model value {model}, observation {observed}")]
    LossDomain {
        loss: &'static str,
        model: f64,
        observed: f64,
    },
    #[error("linear solve failed: matrix not positive definite even with jitter {jitter:e}")]
    SolveFailed { jitter: f64 },
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("diverged at iteration {iteration}: loss {loss} vs initial {initial}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error("sketch plan selects no observations")]
    EmptyPlan,
    #[error("negative value {0} where a count was expected")]
    NegativeCount(f64),
    #[error("time slice of subject {subject} at time {time} sums to zero")]
    ZeroSlice { subject: usize, time: f64 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
