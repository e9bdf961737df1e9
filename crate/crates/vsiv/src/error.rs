use thiserror::Error;

#[derive(Debug, Error)]
pub enum VsivError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("guard exceeded: {0}")]
    Guard(String),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, VsivError>;
