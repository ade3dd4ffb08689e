use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("tensor shape {0:?} is invalid (dimensions must be positive)")]
    InvalidShape(Vec<usize>),
    #[error("tensor data has {len} values but shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("column slice {start}..{end} out of range for {cols} columns")]
    SliceOutOfRange { start: usize, end: usize, cols: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("attention needs at least one key row")]
    EmptyKeys,
    #[error("model width {width} is not divisible by {heads} heads")]
    HeadMismatch { width: usize, heads: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient set does not match the parameter store")]
    GradientLayout,
}
