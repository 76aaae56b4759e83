use std::path::PathBuf;

use crate::archive::{ConstructionLabel, TokenRole};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing archive file {0}")]
    MissingFile(PathBuf),

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    #[error("unsupported archive format_version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("tensor file {path} is truncated: expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },

    #[error("tensor file {path} is oversized: expected {expected} bytes, found {actual}")]
    Oversized { path: PathBuf, expected: u64, actual: u64 },

    #[error("tensor {tensor} has shape {actual:?}, expected {expected:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error(
        "attention row does not sum to 1 (layer {layer}, sentence {sentence}, head {head}, query {query}): sum = {sum}"
    )]
    AttentionRow {
        layer: usize,
        sentence: usize,
        head: usize,
        query: usize,
        sum: f64,
    },

    #[error("padding position {position} of sentence {sentence} is not zeroed in {tensor}")]
    Padding {
        tensor: String,
        sentence: usize,
        position: usize,
    },

    #[error("layer {layer} out of range [{min}, {max}]")]
    LayerOutOfRange { layer: usize, min: usize, max: usize },

    #[error("head {head} out of range (archive has {n_heads} heads)")]
    HeadOutOfRange { head: usize, n_heads: usize },

    #[error("role {0} is present in no sentence")]
    EmptySelection(TokenRole),

    #[error("vocabulary for {label} yields {available} distinct sentences, {required} required")]
    Capacity {
        label: ConstructionLabel,
        required: usize,
        available: u128,
    },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("class {class} has {size} point(s); at least 2 are required")]
    ClassTooSmall { class: usize, size: usize },

    #[error("{found} class(es) present; at least {required} are required")]
    TooFewClasses { found: usize, required: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distance matrix is not symmetric at ({row}, {col}): |d_ij - d_ji| = {diff}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("distance matrix diagonal entry {0} is not zero")]
    NonZeroDiagonal(usize),

    #[error("degenerate embedding: no positive eigenvalue")]
    DegenerateEmbedding,

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("group {group} has {size} sample(s); at least {required} required")]
    GroupTooSmall { group: usize, size: usize, required: usize },

    #[error("role {0} missing from statistics")]
    MissingRole(TokenRole),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
