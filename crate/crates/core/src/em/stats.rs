use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// What a block transfer was spent on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Insert,
    Flush,
    Query,
    Sweep,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Insert, Phase::Flush, Phase::Query, Phase::Sweep];

    fn index(self) -> usize {
        match self {
            Phase::Insert => 0,
            Phase::Flush => 1,
            Phase::Query => 2,
            Phase::Sweep => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Insert => "insert",
            Phase::Flush => "flush",
            Phase::Query => "query",
            Phase::Sweep => "sweep",
        }
    }
}

/// Block read/write counters, broken down by phase. Counters only grow.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoStats {
    reads: [u64; 4],
    writes: [u64; 4],
}

impl IoStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_reads(&mut self, phase: Phase, blocks: u64) {
        self.reads[phase.index()] += blocks;
    }

    pub fn charge_writes(&mut self, phase: Phase, blocks: u64) {
        self.writes[phase.index()] += blocks;
    }

    pub fn reads(&self, phase: Phase) -> u64 {
        self.reads[phase.index()]
    }

    pub fn writes(&self, phase: Phase) -> u64 {
        self.writes[phase.index()]
    }

    pub fn total_reads(&self) -> u64 {
        self.reads.iter().sum()
    }

    pub fn total_writes(&self) -> u64 {
        self.writes.iter().sum()
    }

    /// Reads plus writes over all phases.
    pub fn total_blocks(&self) -> u64 {
        self.total_reads() + self.total_writes()
    }

    /// Reads plus writes for one phase.
    pub fn blocks(&self, phase: Phase) -> u64 {
        self.reads(phase) + self.writes(phase)
    }

    /// Flat CSV report: `phase,reads,writes`, one row per phase plus a total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,reads,writes\n");
        for phase in Phase::ALL {
            let _ = writeln!(out, "{},{},{}", phase.name(), self.reads(phase), self.writes(phase));
        }
        let _ = writeln!(out, "total,{},{}", self.total_reads(), self.total_writes());
        out
    }
}

/// Number of `block_size`-entry blocks needed to hold `len` entries.
pub fn blocks_for(len: usize, block_size: usize) -> u64 {
    len.div_ceil(block_size) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_arithmetic() {
        assert_eq!(blocks_for(0, 64), 0);
        assert_eq!(blocks_for(1, 64), 1);
        assert_eq!(blocks_for(100, 64), 2);
        assert_eq!(blocks_for(130, 64), 3);
        assert_eq!(blocks_for(4096, 64), 64);
    }

    #[test]
    fn csv_has_every_phase_and_total() {
        let mut io = IoStats::new();
        io.charge_reads(Phase::Flush, 3);
        io.charge_writes(Phase::Flush, 2);
        io.charge_reads(Phase::Query, 7);
        let csv = io.to_csv();
        assert_eq!(
            csv,
            "phase,reads,writes\ninsert,0,0\nflush,3,2\nquery,7,0\nsweep,0,0\ntotal,10,2\n"
        );
        assert_eq!(io.total_blocks(), 12);
        assert_eq!(io.blocks(Phase::Flush), 5);
    }
}
