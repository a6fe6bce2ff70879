use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("downsample factor is not integral")]
    NonIntegralFactor,
    #[error("duplicate condition group id {0}")]
    DuplicateGroupId(u32),
    #[error("rope: {0}")]
    Rope(&'static str),
    #[error("attention row {0} has no visible column")]
    FullyMaskedRow(usize),
    #[error("segment layout mismatch: {0}")]
    LayoutMismatch(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
