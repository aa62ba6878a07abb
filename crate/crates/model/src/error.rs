use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] ctxseg_core::TensorError),

    #[error(transparent)]
    Data(#[from] ctxseg_data::DataError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("embedding file error: {0}")]
    EmbeddingFile(String),

    #[error("embedding for label {0:?} missing")]
    MissingLabel(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("degenerate embedding for label {0:?} (zero norm)")]
    ZeroNorm(String),

    #[error("remote endpoint error: {0}")]
    Remote(String),

    #[error("remote request timed out after {0} ms")]
    Timeout(u64),

    #[error("remote returned status {0}")]
    RemoteStatus(u16),

    #[error("malformed remote response: {0}")]
    MalformedResponse(String),

    #[error("unknown variant {0:?} (expected baseline|llm|xattn|gnn)")]
    UnknownVariant(String),

    #[error("unknown embedding provider {0:?} (expected hashed|file|remote)")]
    UnknownProvider(String),

    #[error("similarity pairs contain a self-pair for {0:?}")]
    SelfPair(String),

    #[error("contrastive loss needs at least one pair")]
    NoPairs,
}
