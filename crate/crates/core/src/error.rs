use thiserror::Error;

/// Errors raised across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the bounding box")]
    OutsideDomain { point: [f64; 3] },

    #[error("point {point:?} is not on the interface")]
    NotOnInterface { point: [f64; 3] },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 2,
            Error::Divergence(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutsideDomain { .. } => "outside_domain",
            Error::NotOnInterface { .. } => "not_on_interface",
            Error::Unsupported(_) => "unsupported",
            Error::Sampling(_) => "sampling",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Divergence(_) => "divergence",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
