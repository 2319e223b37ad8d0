use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Validate,
    Calibrate,
    Demand,
    Costs,
    Optimality,
    Report,
}

impl Stage {
    /// Stages run by `pipeline`, in order.
    pub const PIPELINE: [Stage; 6] = [
        Stage::Validate,
        Stage::Calibrate,
        Stage::Demand,
        Stage::Costs,
        Stage::Optimality,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Validate => "validate",
            Stage::Calibrate => "calibrate",
            Stage::Demand => "demand",
            Stage::Costs => "costs",
            Stage::Optimality => "optimality",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Stage::PIPELINE
            .into_iter()
            .chain([Stage::Simulate])
            .find(|st| st.as_str() == s)
            .ok_or_else(|| CliError::Input(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{stage}: {source}")]
    Core {
        stage: Stage,
        #[source]
        source: salesrank_core::Error,
    },

    #[error("{stage}: required artifact {} is missing", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },

    #[error("{stage}: artifact {} is corrupted: {reason}", path.display())]
    CorruptArtifact {
        stage: Stage,
        path: PathBuf,
        reason: String,
    },

    #[error("{stage}: {}: {source}", path.display())]
    Io {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MISSING_ARTIFACT: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => EXIT_NUMERICAL,
            CliError::MissingArtifact { .. } => EXIT_MISSING_ARTIFACT,
            _ => EXIT_INPUT,
        }
    }

    pub(crate) fn core(stage: Stage) -> impl FnOnce(salesrank_core::Error) -> CliError {
        move |source| CliError::Core { stage, source }
    }

    pub(crate) fn io(stage: Stage, path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { stage, path, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
