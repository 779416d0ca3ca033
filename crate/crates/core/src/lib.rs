//! Smoothed scores of densities supported on embedded curves, tampered and
//! guided Langevin dynamics driven by them, and the diagnostics that compare
//! long-run samples with their predicted limits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod binning;
pub mod clip_box;
pub mod config;
pub mod data_density;
pub mod dynamics;
pub mod experiment;
pub mod manifold;
pub mod numeric;
pub mod plot;
pub mod score_fields;
pub mod smoothed_density;

use thiserror::Error;

/// Top-level failure of an experiment, grouped by exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{path}, line {line}: {message}")]
    Input {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{stage} failed: {message}")]
    Numeric { stage: &'static str, message: String },
}

impl Error {
    pub fn numeric(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Error::Numeric {
            stage,
            message: e.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for configuration and input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
