use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape holds {expected} values but {found} were given")]
    Shape { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("activation index {index} outside 1..={size}")]
    ActivationIndex { index: usize, size: usize },
    #[error("loss must be a scalar, node holds {0} values")]
    NotScalar(usize),
    #[error("non-finite value in graph at node {node}")]
    NonFinite { node: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("list needs at least one positive and one negative label")]
    SingleClass,
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;
