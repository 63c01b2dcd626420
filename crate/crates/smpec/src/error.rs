use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmpecError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{what} did not converge (residual {residual:.3e})")]
    Numerical { what: String, residual: f64 },
    #[error("lower-level solve failed at {context}: {source}")]
    Lower {
        context: String,
        #[source]
        source: Box<SmpecError>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stalled: {0}")]
    Stall(String),
}

impl SmpecError {
    pub fn arg(msg: impl Into<String>) -> Self {
        SmpecError::Argument(msg.into())
    }

    pub fn numerical(what: impl Into<String>, residual: f64) -> Self {
        SmpecError::Numerical { what: what.into(), residual }
    }

    pub fn in_lower(self, context: impl Into<String>) -> Self {
        SmpecError::Lower { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, SmpecError>;
