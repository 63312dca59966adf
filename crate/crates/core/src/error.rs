use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image shapes that do not line up.
    #[error("dimension error on {axis}: {detail}")]
    Dimension { axis: String, detail: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("non-finite value in {name}: {detail}")]
    Numeric { name: String, detail: String },

    /// Input outside an operation's mathematical domain (n = 0, empty sets, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model construction failed at layer {layer}: {detail}")]
    Construction { layer: usize, detail: String },

    #[error("ingestion error: {detail} ({})", format_paths(.paths))]
    Ingestion { detail: String, paths: Vec<PathBuf> },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }
}

fn format_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
