use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("infeasible density {density} for a {rows}x{cols} layer")]
    InfeasibleDensity { density: f64, rows: usize, cols: usize },

    #[error("requested {requested} items but only {available} candidates")]
    NotEnoughCandidates { requested: usize, available: usize },

    #[error("overlap ratio undefined: regrown set is empty")]
    EmptyRegrownSet,

    #[error("calibration data needs at least 2 samples, got {0}")]
    TooFewCalibrationSamples(usize),

    #[error("layer size {0} exceeds the dense-score limit of {1} entries")]
    LayerTooLarge(usize, usize),

    #[error("oracle size guard exceeded: {0} entries > {1}")]
    OracleSizeGuard(usize, usize),

    #[error("bad mask file: {0}")]
    BadMaskFile(String),

    #[error("bad IDX file {path}: {reason}")]
    BadIdxFile { path: String, reason: String },

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    #[error("dataset '{path}': {source}")]
    DatasetIo {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
