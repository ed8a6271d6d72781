//! Adversarial restoration of underwater imagery.
//!
//! The crate covers the full pipeline: paired-dataset construction
//! ([`pairgen`]), image loading and normalization ([`imageio`]), the U-Net
//! generator and patch critic ([`nets`]), the adversarial training
//! objectives ([`losses`]), the optimization loop with checkpointing
//! ([`trainer`]), batch restoration and throughput measurement ([`infer`]),
//! and the quantitative evaluation metrics ([`evalsuite`]).
//!
//! Networks run on a small reverse-mode tape ([`graph`]) that supports
//! differentiating through its own backward pass, which the critic's
//! gradient-norm penalty requires.

pub mod cli;
pub mod conv;
pub mod evalsuite;
pub mod graph;
pub mod imageio;
pub mod infer;
pub mod losses;
pub mod nets;
pub mod pairgen;
pub mod trainer;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no matching pairs between {0} and {1}")]
    EmptyDataset(PathBuf, PathBuf),
    #[error("duplicate stem `{stem}` in {dir}")]
    DuplicateStem { stem: String, dir: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
