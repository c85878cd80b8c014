use thiserror::Error;

/// Errors produced anywhere in the event pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("timestamp regression at record {index}: {t} us after {previous} us")]
    Ordering { index: u64, previous: u64, t: u64 },

    #[error("pixel ({x}, {y}) outside {width}x{height} sensor at record {index}")]
    Bounds {
        index: u64,
        x: u32,
        y: u32,
        width: u16,
        height: u16,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no spectral peak above the noise floor")]
    NoPeak,

    #[error("degenerate least-squares design: {0}")]
    DegenerateFit(String),

    #[error("resonance singularity: k = m*omega^2 with zero damping")]
    Singularity,

    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("axes disagree on the oscillation frequency: {omega_u:.3} vs {omega_v:.3} rad/s")]
    InconsistentMotion { omega_u: f64, omega_v: f64 },

    #[error("unreliable estimate: {0}")]
    Unreliable(String),

    #[error("event buffer overflow: capacity {0} events")]
    BufferOverflow(usize),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let offset = e.position().map_or(0, |p| p.byte());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::parse(offset, format!("{other:?}")),
        }
    }
}
