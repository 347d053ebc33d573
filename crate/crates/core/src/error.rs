use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // codes
    #[error("LFSR seed is all-zero")]
    ZeroSeed,
    #[error("feedback polynomial of degree {degree} is not maximal: cycle length {period}, expected {expected}")]
    NonMaximalPolynomial {
        degree: usize,
        period: usize,
        expected: usize,
    },
    #[error("invalid LFSR: {0}")]
    InvalidLfsr(String),
    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),

    // shared
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // waveform
    #[error("QPSK needs an even number of bits")]
    OddBitCount,
    #[error("guard interval {cp_len} must be shorter than the transform size {n_fft}")]
    BadGuard { cp_len: usize, n_fft: usize },
    #[error("{n_sc} subcarriers do not fit a {n_fft}-point transform")]
    TooManySubcarriers { n_sc: usize, n_fft: usize },
    #[error("despreading weights are degenerate (normalization {0:e})")]
    DegenerateWeights(f64),

    // channel
    #[error("{taps} taps exceed the {n_fft}-point transform")]
    TooManyTaps { taps: usize, n_fft: usize },
    #[error("invalid channel model: {0}")]
    InvalidModel(String),

    // estimation
    #[error("training length {n} is shorter than the {m_t} transmit antennas")]
    TooShort { m_t: usize, n: usize },
    #[error("training Gram matrix is singular (condition {0:e})")]
    SingularGram(f64),
    #[error("channel correlation matrix is not invertible")]
    SingularCorrelation,
    #[error("SNR must be positive, got {0}")]
    NonPositiveSnr(f64),
    #[error("{n_p} pilots do not divide {n_sc} subcarriers")]
    NotDivisible { n_sc: usize, n_p: usize },
    #[error("interpolation needs at least two pilots, got {0}")]
    TooFewPilots(usize),
    #[error("kept tap count {kept} must be in 1..={n_p}")]
    BadTapCount { kept: usize, n_p: usize },

    // simulate / cli
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trial {trial} at {snr_db} dB failed during {stage}: {source}")]
    Trial {
        snr_db: f64,
        trial: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
    #[error("missing required key `{0}`")]
    MissingRequired(&'static str),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
