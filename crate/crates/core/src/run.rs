//! Reproducible runs: a manifest pins the configuration, the stream and
//! the hashes of everything the run wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DetectorConfig;
use crate::detector::{run_stream, trace_to_csv, DetectorCounters, RunOutcome};
use crate::em::{IoStats, Storage};
use crate::error::{Error, Result};
use crate::report::events_to_csv;
use crate::workload::read_stream;

pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: DetectorConfig,
    pub storage: Storage,
    pub stream: FileRef,
    pub stream_len: u64,
    pub events: FileRef,
    pub io_stats: FileRef,
    pub threshold_trace: Option<FileRef>,
    pub io: IoStats,
    pub counters: DetectorCounters,
    /// Verifier output, when the run was checked against ground truth.
    pub verdicts: Option<Vec<String>>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Bytes written by a run, before they hit disk.
pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub events_csv: String,
    pub io_csv: String,
    pub trace_csv: Option<String>,
}

pub fn render(cfg: &DetectorConfig, outcome: RunOutcome) -> RunArtifacts {
    let trace_csv = cfg.dynamic_thresholds.then(|| trace_to_csv(&outcome.threshold_trace));
    RunArtifacts {
        events_csv: events_to_csv(&outcome.events),
        io_csv: outcome.io.to_csv(),
        trace_csv,
        outcome,
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Runs `cfg` over the stream file and writes `events.csv`, `io.csv`,
/// `thresholds.csv` (dynamic thresholds only) and `manifest.json` into
/// `out_dir`.
pub fn execute(
    cfg: &DetectorConfig,
    storage: &Storage,
    stream_path: &Path,
    out_dir: &Path,
) -> Result<RunManifest> {
    let stream_bytes = std::fs::read(stream_path)?;
    let stream = read_stream(stream_path)?;
    let art = render(cfg, run_stream(cfg, storage, &stream)?);
    std::fs::create_dir_all(out_dir)?;
    let write = |name: &str, text: &str| -> Result<FileRef> {
        let path = out_dir.join(name);
        std::fs::write(&path, text)?;
        Ok(FileRef { path: absolute(&path), sha256: sha256_hex(text.as_bytes()) })
    };
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        storage: storage.clone(),
        stream: FileRef { path: absolute(stream_path), sha256: sha256_hex(&stream_bytes) },
        stream_len: stream.len() as u64,
        events: write("events.csv", &art.events_csv)?,
        io_stats: write("io.csv", &art.io_csv)?,
        threshold_trace: art.trace_csv.as_deref().map(|t| write("thresholds.csv", t)).transpose()?,
        io: art.outcome.io.clone(),
        counters: art.outcome.counters,
        verdicts: None,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub events_match: bool,
    pub io_match: bool,
    pub trace_match: bool,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.events_match && self.io_match && self.trace_match
    }
}

/// Re-runs a manifest in simulation and compares output hashes.
pub fn replay(manifest: &RunManifest) -> Result<ReplayReport> {
    let bytes = std::fs::read(&manifest.stream.path)?;
    let got = sha256_hex(&bytes);
    if got != manifest.stream.sha256 {
        return Err(Error::Parse(format!(
            "stream {} changed: sha256 {got}, manifest has {}",
            manifest.stream.path.display(),
            manifest.stream.sha256
        )));
    }
    let stream = read_stream(&manifest.stream.path)?;
    let art = render(&manifest.config, run_stream(&manifest.config, &Storage::Memory, &stream)?);
    let trace_match = match (&manifest.threshold_trace, &art.trace_csv) {
        (Some(r), Some(t)) => r.sha256 == sha256_hex(t.as_bytes()),
        (None, None) => true,
        _ => false,
    };
    Ok(ReplayReport {
        events_match: sha256_hex(art.events_csv.as_bytes()) == manifest.events.sha256,
        io_match: sha256_hex(art.io_csv.as_bytes()) == manifest.io_stats.sha256
            && art.outcome.io == manifest.io,
        trace_match,
    })
}
