use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed header: expected `{expected}`, found `{found}`", path.display())]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{}: row {row}: {reason}", path.display())]
    Row {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("duplicate product_id `{0}`")]
    DuplicateProduct(String),

    #[error("bundle `{0}` has no components")]
    EmptyBundle(String),

    #[error("product `{0}` lists components but is not a bundle")]
    UnexpectedComponents(String),

    #[error("unknown {field} token `{token}`")]
    UnknownToken { field: &'static str, token: String },

    #[error("product `{0}` has kind requiring a group_id but none is set")]
    MissingGroup(String),

    #[error("bundle `{bundle}` references component `{component}` absent from catalog")]
    MissingComponent { bundle: String, component: String },

    #[error("product `{product}` appears in more than one {relation} group")]
    DuplicateMembership { product: String, relation: String },

    #[error("product `{0}` has observations but is not in the catalog")]
    UnknownProduct(String),

    #[error("panel is empty")]
    EmptyPanel,

    #[error("duplicate observation for product `{product}` at {timestamp}")]
    DuplicateObservation { product: String, timestamp: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("system is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fitted rank slope {0} is not negative")]
    NonNegativeSlope(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no interior optimum: {0}")]
    Infeasible(String),
}

impl Error {
    /// True for failures that come from the numbers rather than the inputs'
    /// shape (ill-conditioned systems, degenerate fits, infeasible optima).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::Degenerate(_)
                | Error::NonNegativeSlope(_)
                | Error::Infeasible(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
