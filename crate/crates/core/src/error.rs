use thiserror::Error;

use crate::geometry::GeometryError;
use crate::graph::GraphError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::visibility::VisibilityError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
    #[error(transparent)]
    Nn(NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => Error::Numerical(e.to_string()),
            other => Error::Nn(other),
        }
    }
}

impl From<GraphError> for Error {
    fn from(e: GraphError) -> Self {
        Error::Nn(NnError::Graph(e))
    }
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 4,
            Error::Nn(NnError::NonFinite { .. }) => 4,
            Error::Data(_)
            | Error::Model(_)
            | Error::Geometry(_)
            | Error::Visibility(_)
            | Error::Nn(_)
            | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
