use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invariant violation:\n  {}", .0.join("\n  "))]
    InvariantViolation(Vec<String>),

    #[error("question {question_id}: step {step} depends on step {dependency}, which is not an earlier step")]
    DanglingDependency {
        question_id: String,
        step: usize,
        dependency: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bad magic {0:?}, expected \"SMFX\"")]
    BadMagic([u8; 4]),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("unsupported SMFX version {0}")]
    VersionUnsupported(u32),

    #[error("no embedding for label {0:?}")]
    UnknownLabel(String),

    #[error(
        "context mismatch: question is on image {question_image}, match table is for {table_image}"
    )]
    ImageMismatch {
        question_image: String,
        table_image: String,
    },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("class {0:?} has no instances in the dataset")]
    EmptyClass(String),

    #[error("unsupported operation {0:?}")]
    UnsupportedOperation(String),

    #[error("step {step} ({operation}) needs exactly one object, selection has {count}")]
    AmbiguousSelection {
        step: usize,
        operation: String,
        count: usize,
    },

    #[error("donor {image_id}/{object_id} has no matched detection")]
    DonorUnmatched { image_id: String, object_id: String },

    #[error("incomplete answer log: {} missing, {} conflicting{}", missing.len(), conflicts.len(), describe_pairs(missing, conflicts))]
    IncompleteLog {
        missing: Vec<(String, u32)>,
        conflicts: Vec<(String, u32)>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn describe_pairs(missing: &[(String, u32)], conflicts: &[(String, u32)]) -> String {
    const SHOWN: usize = 20;
    let mut out = String::new();
    for (label, pairs) in [("missing", missing), ("conflict", conflicts)] {
        for (qid, pert) in pairs.iter().take(SHOWN) {
            out.push_str(&format!("\n  {label}: ({qid},{pert})"));
        }
        if pairs.len() > SHOWN {
            out.push_str(&format!("\n  ... {} more {label}", pairs.len() - SHOWN));
        }
    }
    out
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
