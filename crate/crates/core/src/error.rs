use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("audio signal is empty")]
    EmptySignal,

    #[error("invalid audio buffer: {0}")]
    InvalidBuffer(String),

    #[error("invalid sampling rate: {0}")]
    InvalidRate(f64),

    #[error("invalid window length {0}: must be even and positive")]
    InvalidLength(usize),

    #[error("stft parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("stft parameters do not form a tight frame: {0}")]
    NotInvertible(String),

    #[error("dB range must be positive, got {0}")]
    InvalidRange(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid gap [{start}, {end}) for signal of length {len}")]
    InvalidGap { start: usize, end: usize, len: usize },

    #[error("gap [{start}, {end}) lies outside the signal of length {len}")]
    GapOutOfBounds { start: usize, end: usize, len: usize },

    #[error("gaps too close to each other: splice regions overlap")]
    OverlappingGaps,

    #[error("not enough valid frames for {k} neighbors: {valid} valid frames")]
    NotEnoughFrames { k: usize, valid: usize },

    #[error("kernel length {0} must be even and at least 2")]
    InvalidKernelLength(usize),

    #[error("no valid query frames around the gap")]
    NoValidQueries,

    #[error("no acceptable transition found for gap [{start}, {end}); try lowering t_w or raising epsilon_seconds")]
    NoTransitionFound { start: usize, end: usize },

    #[error("{count} candidate transition pairs exceed the cap of {cap}")]
    TooManyCandidates { count: usize, cap: usize },

    #[error("transition too close to the signal edge: {0}")]
    OutOfBounds(String),

    #[error("signal too short: {0}")]
    SignalTooShort(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl From<hound::Error> for Error {
    fn from(err: hound::Error) -> Self {
        match err {
            hound::Error::IoError(e) => Error::Io(e),
            other => Error::UnsupportedFormat(other.to_string()),
        }
    }
}
