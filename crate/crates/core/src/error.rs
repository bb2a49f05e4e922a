use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },

    #[error("expected mono audio, found {channels} channels")]
    ChannelMismatch { channels: u16 },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("malformed file: {0}")]
    ParseError(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("synthesis window sum below floor at sample {sample}")]
    SynthesisError { sample: usize },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeError {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("signal too short: need at least {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    #[error("energy mask selects no units")]
    EmptyLossSupport,
}
