//! Simulator, file formats and command line for lazy GNSS/vision
//! teach-and-repeat, built on [`lazynav_core`].

use std::path::{Path, PathBuf};

pub mod cli;
pub mod graph_io;
pub mod path;
pub mod replay;
pub mod report;
pub mod scenario;
pub mod sim;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Replay { line: u64, reason: String },
    #[error("graph was built from a different scenario (graph {graph}, scenario {scenario})")]
    HashMismatch { graph: String, scenario: String },
    #[error("simulation: {0}")]
    Sim(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
