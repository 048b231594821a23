//! Online event detection over cascaded Misra-Gries levels.
//!
//! A key's event is its `T`-th occurrence. The detectors in this crate
//! report every event from a stream of `N` keys while holding only `M`
//! records in RAM, and account for every block moved to or from storage:
//!
//! * [`cascade::Cascade`] reports each event at the arrival that causes it.
//! * [`time_stretch::TimeStretchFilter`] reports within a bounded delay
//!   proportional to the key's flow time, doing all work in batched flushes.
//! * [`power_law::PowerLawFilter`] exploits power-law count distributions
//!   with per-level count thresholds.
//!
//! [`workload`] generates streams and computes exact ground truth,
//! [`verify`] compares detector output against it, and [`run`] ties a
//! configuration, a stream and its outputs into a replayable manifest.

pub mod bench;
pub mod cascade;
pub mod config;
pub mod detector;
pub mod em;
pub mod error;
pub mod mg;
pub mod power_law;
pub mod report;
pub mod run;
pub mod time_stretch;
pub mod verify;
pub mod workload;

pub use config::{DetectorConfig, Epsilon, Mode, Stretch, Threshold};
pub use detector::Detector;
pub use em::{IoStats, Phase, Storage};
pub use error::{Error, Result};
pub use mg::MgTable;
pub use report::EventReport;
