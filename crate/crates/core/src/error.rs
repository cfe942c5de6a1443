use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("degenerate curvature at x = {x}: V^H is zero")]
    DegenerateCurvature { x: f64 },

    #[error("strip x = {x}: {source}")]
    Strip {
        x: f64,
        #[source]
        source: Box<EdgeError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EdgeError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        EdgeError::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EdgeError>;
