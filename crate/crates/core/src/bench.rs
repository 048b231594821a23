//! Grid benchmarks of amortized block transfers per item.

use std::fmt::Write as _;

use crate::config::{DetectorConfig, Mode, Stretch, Threshold};
use crate::detector::run_stream;
use crate::em::{IoStats, Storage};
use crate::error::{Error, Result};
use crate::workload::{generate, StreamSpec};

/// Values swept by a benchmark. Every combination is one cell. `param` is
/// `T` for online, `q` for time-stretch and `theta` for power-law runs.
#[derive(Clone, Debug)]
pub struct BenchGrid {
    pub base: DetectorConfig,
    pub n: Vec<u64>,
    pub m: Vec<usize>,
    pub b: Vec<usize>,
    pub r: Vec<f64>,
    pub param: Vec<f64>,
}

pub enum BenchStream<'a> {
    /// Regenerated per cell with that cell's `n`.
    Generate(StreamSpec),
    /// Used as is; every cell's `n` must equal its length.
    Fixed(&'a [u64]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: Mode,
    pub n: u64,
    pub m: usize,
    pub b: usize,
    pub r: f64,
    pub param: f64,
    pub blocks_per_item: f64,
    pub queries: u64,
    pub sweeps: u64,
    pub io: IoStats,
}

pub const BENCH_HEADER: &str = "mode,n,m,b,r,param,blocks_per_item,queries,sweeps";

fn apply_param(cfg: &mut DetectorConfig, param: f64) -> Result<()> {
    match cfg.mode {
        Mode::Online => cfg.threshold = Threshold::Count(param as u64),
        Mode::TimeStretch => cfg.stretch = Stretch::Bins(param as usize),
        Mode::PowerLaw => cfg.theta = Some(param),
    }
    if cfg.mode != Mode::PowerLaw && param.fract() != 0.0 {
        return Err(Error::Config(format!("{} bench parameter must be an integer, got {param}", cfg.mode.name())));
    }
    Ok(())
}

pub fn bench(grid: &BenchGrid, stream: &BenchStream<'_>) -> Result<Vec<BenchRow>> {
    let params: Vec<Option<f64>> =
        if grid.param.is_empty() { vec![None] } else { grid.param.iter().copied().map(Some).collect() };
    let mut rows = Vec::new();
    for &n in &grid.n {
        let keys = match stream {
            BenchStream::Generate(spec) => generate(&StreamSpec { n, ..spec.clone() })?,
            BenchStream::Fixed(k) => {
                if k.len() as u64 != n {
                    return Err(Error::Config(format!("grid n = {n} but the stream has {} keys", k.len())));
                }
                k.to_vec()
            }
        };
        for &m in &grid.m {
            for &b in &grid.b {
                for &r in &grid.r {
                    for &p in &params {
                        let mut cfg = DetectorConfig { n, m, b, r, ..grid.base.clone() };
                        if let Some(p) = p {
                            apply_param(&mut cfg, p)?;
                        }
                        let param = match cfg.mode {
                            Mode::Online => cfg.t() as f64,
                            Mode::TimeStretch => cfg.bins() as f64,
                            Mode::PowerLaw => cfg.theta.unwrap_or(f64::NAN),
                        };
                        let out = run_stream(&cfg, &Storage::Memory, &keys)?;
                        rows.push(BenchRow {
                            mode: cfg.mode,
                            n,
                            m,
                            b,
                            r,
                            param,
                            blocks_per_item: out.io.total_blocks() as f64 / n as f64,
                            queries: out.counters.queries,
                            sweeps: out.counters.sweeps,
                            io: out.io,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{}",
            r.mode.name(),
            r.n,
            r.m,
            r.b,
            r.r,
            r.param,
            r.blocks_per_item,
            r.queries,
            r.sweeps
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_grid_is_one_row() {
        let grid = BenchGrid {
            base: DetectorConfig::online(2000, 1000, 32, 8),
            n: vec![2000],
            m: vec![32],
            b: vec![8],
            r: vec![2.0],
            param: vec![],
        };
        let rows = bench(&grid, &BenchStream::Generate(StreamSpec::uniform(0, 2000, 1))).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].blocks_per_item > 0.0);
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("mode,n,m,b,r,param,blocks_per_item,queries,sweeps\nonline,2000,32,8,2,1000,"));
    }

    #[test]
    fn grid_is_cartesian_and_params_apply() {
        let grid = BenchGrid {
            base: DetectorConfig::time_stretch(1024, 600, 32, 8, 2),
            n: vec![1024],
            m: vec![32],
            b: vec![4, 8],
            r: vec![2.0],
            param: vec![2.0, 4.0],
        };
        let keys: Vec<u64> = (0..1024).collect();
        let rows = bench(&grid, &BenchStream::Fixed(&keys)).unwrap();
        let cells: Vec<(usize, f64)> = rows.iter().map(|r| (r.b, r.param)).collect();
        assert_eq!(cells, vec![(4, 2.0), (4, 4.0), (8, 2.0), (8, 4.0)]);
        assert!(bench(&BenchGrid { n: vec![7], ..grid }, &BenchStream::Fixed(&keys)).is_err());
    }
}
