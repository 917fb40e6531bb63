use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration document could not be parsed or violates the schema.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A layer's pre-activation second moment vanished, so the normalized
    /// correlation coefficient is undefined.
    #[error("degenerate layer {layer}: zero pre-activation variance")]
    DegenerateLayer { layer: usize },

    /// A normalization statistic collapsed below the usable floor.
    #[error("degenerate statistics at layer {layer}: scale component {value:e} below 1e-12")]
    DegenerateStatistics { layer: usize, value: f64 },

    /// Shapes or required fields do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// Power iteration did not reach the requested tolerance.
    #[error(
        "power iteration did not converge: last rayleigh quotient {rayleigh}, residual {residual}"
    )]
    PowerIteration { rayleigh: f64, residual: f64 },

    /// Malformed IDX file.
    #[error("{path}: invalid IDX data at byte {offset}: {message}")]
    IdxFormat {
        path: String,
        offset: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
