use thiserror::Error;

/// Errors produced by the signal kernels, codec, sync and session layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("sampling rates differ: {left} Hz vs {right} Hz")]
    RateMismatch { left: f64, right: f64 },

    #[error("series too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("target rate {0} Hz is not positive")]
    NonPositiveRate(f64),

    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("channel {0:?} not present")]
    UnknownChannel(String),

    #[error("cutoff {cutoff} Hz must be below the Nyquist frequency {nyquist} Hz")]
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },

    #[error("unsupported filter order {0}, expected 2 or 4")]
    UnsupportedOrder(usize),

    #[error("insufficient overlap: {seconds:.3} s available, {required:.3} s required")]
    InsufficientOverlap { seconds: f64, required: f64 },

    #[error("zero-variance input: {0}")]
    ZeroVariance(&'static str),

    #[error("no vibration train found")]
    NoTrainFound,

    #[error("vibration frame delimiters failed validation")]
    DelimiterValidation,

    #[error("ambiguous vibration train: peak span implies more than 8 slots")]
    AmbiguousTrain,

    #[error("test code {0} out of range, must fit in 4 bits")]
    CodeOutOfRange(u8),

    #[error("invalid pulse timing: {0}")]
    InvalidTiming(String),

    #[error("invalid thresholds: lower {lower} and upper {upper} must satisfy 0 < lower < upper")]
    InvalidThresholds { lower: f64, upper: f64 },

    #[error("sampling rate {0} Hz too low to carry a vibration burst")]
    RateTooLow(f64),

    #[error("perturbation window [{start}, {end}] lies outside the {which} series")]
    WindowOutsideSeries {
        start: f64,
        end: f64,
        which: &'static str,
    },

    #[error("perturbation events too close: {gap:.1} s apart, need more than {min:.1} s")]
    EventsTooClose { gap: f64, min: f64 },

    #[error("clock skew {0} outside the sanity bound |skew - 1| < 1e-3")]
    SkewOutOfRange(f64),

    #[error("degenerate marker triad at row {row}: {reason}")]
    DegenerateTriad { row: usize, reason: String },

    #[error("marker triad does not cover the phone series span")]
    SpanMismatch,

    #[error("not a rotation matrix: {0}")]
    NotARotation(String),

    #[error("body mass {0} kg outside the plausible range [20, 300]")]
    MassOutOfRange(f64),

    #[error("force plate pair invalid: {0}")]
    InvalidForcePlates(String),

    #[error("scenario parameters invalid: {0}")]
    InvalidScenario(String),

    #[error("perturbation simulation needs at least 2 devices, got {0}")]
    NeedTwoDevices(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("stream {path}: {message}")]
    Stream { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
