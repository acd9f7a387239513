//! Reproducible runs behind the `seqgp` binary: configuration files, the run
//! manifest and the four commands.

pub mod campaign;
pub mod config;
pub mod fit;
pub mod fourier;
pub mod manifest;
pub mod sample;

use std::path::PathBuf;

use crate::budget::MemoryBudget;

/// Options shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the seed from the configuration file.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub budget: MemoryBudget,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            seed: None,
            threads: None,
            budget: MemoryBudget::default(),
        }
    }
}
