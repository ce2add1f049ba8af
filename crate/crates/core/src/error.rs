use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A feature cell was empty or could not be parsed as a finite number.
    /// `row` is the 1-based data row (the header is not counted).
    #[error("missing or non-finite value in row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("treatment value `{value}` in row {row} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate or empty column name `{0}`")]
    BadColumnName(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset shape is inconsistent: {0}")]
    Shape(String),

    #[error("cannot make {k} folds from {n} samples")]
    InvalidFoldCount { k: usize, n: usize },

    #[error("impurity of an empty node is undefined")]
    EmptyNode,

    #[error("only treatment group {group} is present ({count} samples); the whole cohort violates positivity")]
    DegenerateCohort { group: u8, count: usize },

    #[error("sample has {got} features, tree expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample contains a non-finite value at feature {0}")]
    NonFiniteSample(usize),

    #[error("AUC is undefined when only one label is present")]
    UndefinedAuc,

    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("tree {tree}: every bootstrap resample held a single treatment group after {attempts} attempts")]
    DegenerateBootstrap { tree: usize, attempts: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("invalid search space: {0}")]
    InvalidSearchSpace(String),

    #[error("invalid hypergeometric parameters N={population}, K={successes}, n={draws}")]
    InvalidParameters {
        population: u64,
        successes: u64,
        draws: u64,
    },

    #[error("tree has no leaf with id {0}")]
    UnknownLeaf(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
