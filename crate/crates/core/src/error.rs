use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("region {region} lies outside a {height}x{width} map")]
    OutOfBounds {
        region: String,
        height: usize,
        width: usize,
    },

    #[error("degenerate support region: {size} pixel(s), need at least 2")]
    DegenerateRegion { size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no admissible pose in search space: {0}")]
    EmptySearch(String),

    #[error("database item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::DegenerateRegion { .. } => "degenerate_region",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Empty(_) => "empty",
            Error::EmptySearch(_) => "empty_search",
            Error::Item { .. } => "item",
            Error::Diverged { .. } => "diverged",
            Error::Format { .. } => "format",
            Error::Manifest(_) => "manifest",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
