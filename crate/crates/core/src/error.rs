use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum LaueError {
    #[error("unsupported space group {0}")]
    UnsupportedSpaceGroup(u16),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("degenerate unit cell (volume {0:e})")]
    DegenerateCell(f64),
    #[error("(0,0,0) is not a reflection")]
    ZeroReflection,
    #[error("target mode {mode} is not available for a {system} crystal")]
    IncompatibleTargetMode { mode: String, system: String },
    #[error("stereographic projection undefined at the antipode (v_z = {0})")]
    Antipode(f64),
    #[error("invalid wavelength band [{0}, {1}]")]
    InvalidBand(f64, f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode has ended; call reset first")]
    EpisodeOver,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("backward called before forward on {0}")]
    NoForwardCache(&'static str),
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("class {0} absent from dataset")]
    MissingClass(usize),
    #[error("no Hough line above the accumulator threshold")]
    NoLines,
    #[error("malformed {format} data at byte {offset}: {reason}")]
    Format {
        format: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LaueError>;
