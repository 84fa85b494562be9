//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoveringError>;

#[derive(Debug, Error)]
pub enum CoveringError {
    /// Lexical or grammatical error in a family-spec or scenario document.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    /// A gate set or seed refers to a hypothesis id that does not exist.
    #[error("unknown hypothesis id {id} in {context}")]
    UnknownId { id: u32, context: String },

    /// The same hypothesis id was declared twice.
    #[error("duplicate declaration of hypothesis {id}")]
    DuplicateId { id: u32 },

    /// Declared ids do not form a dense 1..n range.
    #[error("hypothesis ids must form 1..n without holes; missing id {missing}")]
    NonDenseIds { missing: u32 },

    /// The gate graph contains a cycle.
    #[error("gate graph contains a cycle through hypotheses {0:?}")]
    GateCycle(Vec<u32>),

    /// A significance level outside its admissible range.
    #[error("alpha must lie in {range}, got {value}")]
    AlphaOutOfRange { value: f64, range: &'static str },

    /// The family has invariant violations; carried as data.
    #[error("family spec is invalid: {0}")]
    InvalidFamily(String),

    /// A p-value outside [0,1] (or not finite).
    #[error("p-value for hypothesis {id} must lie in [0,1], got {value}")]
    InvalidPValue { id: u32, value: f64 },

    /// Vector/matrix sizes do not agree with the family size.
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    /// A local-test configuration that does not fit the tested members.
    #[error("invalid local test: {0}")]
    InvalidLocalTest(String),

    /// Hochberg requested without acknowledging its dependence requirement.
    #[error(
        "hochberg requires nonnegative dependence among test statistics; \
         set dependence_acknowledged to accept this assumption"
    )]
    HochbergNotAcknowledged,

    /// Correlation matrix failed the Cholesky positive-definiteness check.
    #[error("correlation matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// Malformed scenario configuration.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// An argument outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input exceeds an enumeration bound (2^n subsets, 2^m intersections).
    #[error("{what} supports at most {limit} elements, got {actual}")]
    TooLarge {
        what: &'static str,
        limit: usize,
        actual: usize,
    },

    /// A structural guarantee was violated; indicates corrupted input state.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
