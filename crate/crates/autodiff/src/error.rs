use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("data length {actual} does not match shape size {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("expected a 1x1 tensor, got {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("index {index} out of range for {op} (limit {limit})")]
    Index {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("invalid argument to {op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
