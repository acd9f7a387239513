use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1 GB per worker.
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

pub const F64_BYTES: u64 = 8;

/// Upper bound on bytes a single worker may hold for one block product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub bytes: u64,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget {
            bytes: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl MemoryBudget {
    pub fn new(bytes: u64) -> Self {
        MemoryBudget { bytes }
    }

    pub fn unlimited() -> Self {
        MemoryBudget { bytes: u64::MAX }
    }

    pub fn check(&self, what: &str, needed: u64) -> Result<()> {
        if needed > self.bytes {
            return Err(Error::Budget {
                what: what.to_string(),
                needed,
                budget: self.bytes,
            });
        }
        Ok(())
    }

    /// Bytes of an `rows x cols` f64 matrix.
    pub fn matrix_bytes(rows: usize, cols: usize) -> u64 {
        rows as u64 * cols as u64 * F64_BYTES
    }
}
