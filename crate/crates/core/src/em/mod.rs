//! Block-granular external-memory model.
//!
//! RAM holds `M` records and storage is transferred in blocks of `B`
//! records. Both sizes are counted in records, never bytes. Level metadata
//! (lengths, capacities, thresholds) is kept outside the `M` budget and is
//! never charged.

mod format;
mod level;
mod stats;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use format::{encode_level, RECORD_BYTES};
pub use level::LevelStore;
pub use stats::{blocks_for, IoStats, Phase};

pub const FLAG_REPORTED: u8 = 1;
pub const FLAG_PINNED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub key: u64,
    pub count: u64,
    pub flags: u8,
}

impl Record {
    pub fn new(key: u64, count: u64) -> Self {
        Self { key, count, flags: 0 }
    }

    pub fn reported(&self) -> bool {
        self.flags & FLAG_REPORTED != 0
    }

    pub fn pinned(&self) -> bool {
        self.flags & FLAG_PINNED != 0
    }

    pub fn with_reported(mut self, on: bool) -> Self {
        if on {
            self.flags |= FLAG_REPORTED;
        } else {
            self.flags &= !FLAG_REPORTED;
        }
        self
    }
}

/// Where level runs live.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dir")]
pub enum Storage {
    /// Simulated blocks held in memory.
    #[default]
    Memory,
    /// One level file per run under this directory.
    File(PathBuf),
}

#[derive(Debug, thiserror::Error)]
pub enum EmError {
    #[error("storage I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("level {level} holds at most {capacity} records, rebuild asked for {len}")]
    CapacityExceeded { level: String, capacity: usize, len: usize },
    #[error("level {level}: run not strictly sorted at record {index}")]
    Unsorted { level: String, index: usize },
    #[error("corrupt level file: {0}")]
    Corrupt(String),
}
