use serde::{Deserialize, Serialize};

use crate::cascade::Cascade;
use crate::config::{DetectorConfig, Mode};
use crate::em::{IoStats, Storage};
use crate::error::{Error, Result};
use crate::power_law::PowerLawFilter;
use crate::report::EventReport;
use crate::time_stretch::TimeStretchFilter;

/// Work counters common to every mode; fields a mode does not use stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorCounters {
    pub queries: u64,
    pub sweeps: u64,
    pub flushes: u64,
    pub merges: u64,
    pub reports: u64,
}

pub enum Detector {
    Online(Cascade),
    TimeStretch(TimeStretchFilter),
    PowerLaw(PowerLawFilter),
}

impl Detector {
    pub fn new(cfg: &DetectorConfig, storage: &Storage) -> Result<Self> {
        Ok(match cfg.mode {
            Mode::Online => Detector::Online(Cascade::new(cfg, storage)?),
            Mode::TimeStretch => Detector::TimeStretch(TimeStretchFilter::new(cfg, storage)?),
            Mode::PowerLaw => Detector::PowerLaw(PowerLawFilter::new(cfg, storage)?),
        })
    }

    pub fn insert(&mut self, key: u64, time: u64) -> Result<Vec<EventReport>> {
        match self {
            Detector::Online(c) => Ok(c.insert(key, time)?.into_iter().collect()),
            Detector::TimeStretch(f) => f.insert(key, time),
            Detector::PowerLaw(f) => f.insert(key, time),
        }
    }

    /// End-of-stream reports. The online detector has none pending.
    pub fn finish(&mut self) -> Result<Vec<EventReport>> {
        match self {
            Detector::Online(_) => Ok(Vec::new()),
            Detector::TimeStretch(f) => f.finalize(),
            Detector::PowerLaw(f) => f.finalize(),
        }
    }

    pub fn io(&self) -> &IoStats {
        match self {
            Detector::Online(c) => c.io(),
            Detector::TimeStretch(f) => f.io(),
            Detector::PowerLaw(f) => f.io(),
        }
    }

    pub fn counters(&self) -> DetectorCounters {
        match self {
            Detector::Online(c) => {
                let k = c.counters();
                DetectorCounters { queries: k.queries, flushes: k.flushes, reports: k.reports, ..Default::default() }
            }
            Detector::TimeStretch(f) => {
                let k = f.counters();
                DetectorCounters { flushes: k.flushes, reports: k.reports, ..Default::default() }
            }
            Detector::PowerLaw(f) => {
                let k = f.counters();
                DetectorCounters { sweeps: k.sweeps, merges: k.merges, reports: k.reports, ..Default::default() }
            }
        }
    }

    /// `(merge index, thresholds)` per merge for a dynamic power-law run.
    pub fn threshold_trace(&self) -> &[(u64, Vec<u64>)] {
        match self {
            Detector::PowerLaw(f) => f.threshold_trace(),
            _ => &[],
        }
    }
}

/// Everything a finished run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub events: Vec<EventReport>,
    pub io: IoStats,
    pub counters: DetectorCounters,
    pub threshold_trace: Vec<(u64, Vec<u64>)>,
}

/// Feeds `stream` with 1-based times and collects every report, end of
/// stream included, in emission order.
pub fn run_stream(cfg: &DetectorConfig, storage: &Storage, stream: &[u64]) -> Result<RunOutcome> {
    if stream.len() as u64 > cfg.n {
        return Err(Error::PastEnd { got: stream.len() as u64, n: cfg.n });
    }
    let mut det = Detector::new(cfg, storage)?;
    let mut events = Vec::new();
    for (i, &k) in stream.iter().enumerate() {
        events.extend(det.insert(k, i as u64 + 1)?);
    }
    events.extend(det.finish()?);
    Ok(RunOutcome {
        events,
        io: det.io().clone(),
        counters: det.counters(),
        threshold_trace: det.threshold_trace().to_vec(),
    })
}

pub fn trace_to_csv(trace: &[(u64, Vec<u64>)]) -> String {
    let mut out = String::from("merge,tau\n");
    for (m, tau) in trace {
        let t: Vec<String> = tau.iter().map(u64::to_string).collect();
        out.push_str(&format!("{m},{}\n", t.join(" ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_mode_runs_and_counts() {
        let stream: Vec<u64> = (0..400).map(|i| if i % 3 == 0 { 7 } else { i }).collect();
        for cfg in [
            DetectorConfig::online(400, 130, 16, 4),
            DetectorConfig::time_stretch(400, 130, 16, 4, 2),
            DetectorConfig::power_law(400, 130, 16, 4, 2.0),
        ] {
            let out = run_stream(&cfg, &Storage::Memory, &stream).unwrap();
            assert_eq!(out.events.len(), 1, "{:?}", cfg.mode);
            assert_eq!(out.events[0].key, 7);
            assert_eq!(out.counters.reports, 1);
        }
    }

    #[test]
    fn stream_longer_than_n_is_rejected() {
        let cfg = DetectorConfig::online(3, 2, 4, 4);
        assert!(run_stream(&cfg, &Storage::Memory, &[1, 2, 3, 4]).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        assert_eq!(trace_to_csv(&[(1, vec![3, 0]), (2, vec![3, 1])]), "merge,tau\n1,3 0\n2,3 1\n");
    }
}
