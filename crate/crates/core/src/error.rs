use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fibers {first} and {second} both round to pixel ({u}, {v})")]
    Collision {
        first: usize,
        second: usize,
        u: i64,
        v: i64,
    },

    #[error("fiber {index} at ({x}, {y}) rounds outside the {width}x{height} grid")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid fiber layout: {0}")]
    Layout(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("fiber {0} has an empty Voronoi cell")]
    EmptyCell(usize),

    #[error("degenerate triangulation: {0}")]
    Degenerate(String),

    #[error("kernel normalization failed: output channel {0} has zero L1 norm")]
    ZeroKernel(usize),

    #[error("image too small: {0}")]
    Size(String),

    #[error("missing forward cache: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {what} in {path}: {msg}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("png error: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Collision { .. } => "collision",
            Error::OutOfBounds { .. } => "bounds",
            Error::Layout(_) => "layout",
            Error::DegenerateFrame(_) => "degenerate_frame",
            Error::EmptyCell(_) => "empty_cell",
            Error::Degenerate(_) => "degenerate",
            Error::ZeroKernel(_) => "zero_kernel",
            Error::Size(_) => "size",
            Error::State(_) => "state",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Png(_) => "png",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
