//! External-memory Misra-Gries cascade and the online detector built on it.
//!
//! Level 0 is an in-RAM table of `M` counters. Level `i` on disk is a sorted
//! run of at most `ceil(r^i M)` records. When a level overflows it gives up
//! one unit per stored key, and those units are merged into the next level,
//! whose own overflow cascades further. Summing a key over levels `0..=j`
//! underestimates its frequency by less than `N / (r^j M)`.
//!
//! A key whose level-0 count rises above `(phi - 1/M) N` is queried once
//! across all levels. The consolidated total is then kept next to its
//! level-0 entry and advanced on each arrival, so the report fires at
//! exactly the arrival that reaches the threshold with no further I/O.

use std::collections::{BTreeMap, HashMap};

use crate::config::DetectorConfig;
use crate::em::{IoStats, LevelStore, Phase, Record, Storage, FLAG_REPORTED};
use crate::error::{Error, Result};
use crate::mg::{MgTable, Unit};
use crate::report::EventReport;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CascadeCounters {
    /// Consolidating queries issued by the trigger.
    pub queries: u64,
    pub reports: u64,
    /// Level-0 overflows pushed to disk.
    pub flushes: u64,
}

/// A key surviving the end-of-stream scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeavyHitter {
    pub key: u64,
    pub count: u64,
    pub reported: bool,
}

pub struct Cascade {
    cfg: DetectorConfig,
    report_at: u64,
    line: f64,
    level0: MgTable,
    disk: Vec<LevelStore>,
    overflow: LevelStore,
    tracked: HashMap<u64, u64>,
    io: IoStats,
    time: u64,
    counters: CascadeCounters,
}

impl Cascade {
    pub fn new(cfg: &DetectorConfig, storage: &Storage) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.levels();
        let disk = (1..levels)
            .map(|i| {
                LevelStore::create(&format!("c{i}"), Some(cfg.level_capacity(i)), cfg.b, storage)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let overflow = LevelStore::create(&format!("c{levels}"), None, cfg.b, storage)?;
        Ok(Self {
            cfg: cfg.clone(),
            report_at: cfg.report_threshold(),
            line: cfg.trigger_line(),
            level0: MgTable::new(cfg.m),
            disk,
            overflow,
            tracked: HashMap::new(),
            io: IoStats::new(),
            time: 0,
            counters: CascadeCounters::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn io(&self) -> &IoStats {
        &self.io
    }

    pub fn counters(&self) -> CascadeCounters {
        self.counters
    }

    /// Number of counting levels, RAM included (the overflow level is extra).
    pub fn levels(&self) -> usize {
        self.disk.len() + 1
    }

    /// Processes the arrival of `key` at 1-based index `time`.
    pub fn insert(&mut self, key: u64, time: u64) -> Result<Option<EventReport>> {
        if time <= self.time {
            return Err(Error::TimeOrder { prev: self.time, got: time });
        }
        if time > self.cfg.n {
            return Err(Error::PastEnd { got: time, n: self.cfg.n });
        }
        self.time = time;

        let batch = self.level0.insert(key);
        if batch.is_empty() {
            if let Some(total) = self.tracked.get_mut(&key) {
                *total += 1;
            }
        } else {
            let level0 = &self.level0;
            self.tracked.retain(|k, _| level0.contains(*k));
            self.counters.flushes += 1;
            self.flush(batch)?;
        }
        self.trigger(key, time)
    }

    fn trigger(&mut self, key: u64, time: u64) -> Result<Option<EventReport>> {
        let entry = self.level0.get(key).copied();
        if entry.is_some_and(|e| e.reported) {
            return Ok(None);
        }
        if let Some(&total) = self.tracked.get(&key) {
            if total >= self.report_at {
                self.tracked.remove(&key);
                return self.emit(key, time, total).map(Some);
            }
            return Ok(None);
        }
        let est = entry.map_or(0, |e| e.count);
        if est as f64 <= self.line {
            return Ok(None);
        }
        self.counters.queries += 1;
        let (count, reported) = self.consolidate_query(key)?;
        if reported {
            return Ok(None);
        }
        if count >= self.report_at {
            return self.emit(key, time, count).map(Some);
        }
        if entry.is_some() {
            self.tracked.insert(key, count);
        }
        Ok(None)
    }

    fn emit(&mut self, key: u64, time: u64, count: u64) -> Result<EventReport> {
        self.counters.reports += 1;
        match self.level0.get_mut(key) {
            Some(e) => e.reported = true,
            // Only reachable when the trigger line is negative: the arrival
            // was absorbed by a level-0 decrement, so the bit goes straight
            // to the overflow level.
            None => self.mark_overflow(&[key], Phase::Query)?,
        }
        Ok(EventReport::on_time(key, time, count))
    }

    /// Sums `key` over all counting levels, stopping at the first level
    /// whose record carries the reported bit. A reported hit is cached at
    /// level 0 when the key is resident there.
    pub fn consolidate_query(&mut self, key: u64) -> Result<(u64, bool)> {
        let mut count = 0;
        if let Some(e) = self.level0.get(key) {
            count += e.count;
            if e.reported {
                return Ok((count, true));
            }
        }
        let mut reported = false;
        for level in &self.disk {
            if let Some(rec) = level.point_query(key, &mut self.io, Phase::Query)? {
                count += rec.count;
                if rec.reported() {
                    reported = true;
                    break;
                }
            }
        }
        if !reported {
            reported = self.overflow.point_query(key, &mut self.io, Phase::Query)?.is_some();
        }
        if reported {
            if let Some(e) = self.level0.get_mut(key) {
                e.reported = true;
            }
        }
        Ok((count, reported))
    }

    /// Pushes a level-0 decrement batch down the cascade.
    fn flush(&mut self, batch: Vec<Unit>) -> Result<()> {
        let mut units = batch;
        for level in self.disk.iter_mut() {
            if units.is_empty() {
                break;
            }
            let cap = level.capacity().unwrap_or(usize::MAX);
            let mut table: BTreeMap<u64, (u64, u8)> = level
                .scan(&mut self.io, Phase::Flush)?
                .into_iter()
                .map(|r| (r.key, (r.count, r.flags)))
                .collect();
            let mut out = Vec::new();
            for u in units {
                let flag = if u.reported { FLAG_REPORTED } else { 0 };
                if let Some(e) = table.get_mut(&u.key) {
                    e.0 += 1;
                    e.1 |= flag;
                } else if table.len() < cap {
                    table.insert(u.key, (1, flag));
                } else {
                    for (&k, e) in table.iter_mut() {
                        out.push(Unit { key: k, reported: e.1 & FLAG_REPORTED != 0 });
                        e.0 -= 1;
                    }
                    table.retain(|_, e| e.0 > 0);
                    out.push(u);
                }
            }
            let records =
                table.into_iter().map(|(key, (count, flags))| Record { key, count, flags }).collect();
            level.rebuild(records, &mut self.io, Phase::Flush)?;
            units = out;
        }
        let reported: Vec<u64> = units.iter().filter(|u| u.reported).map(|u| u.key).collect();
        if !reported.is_empty() {
            self.mark_overflow(&reported, Phase::Flush)?;
        }
        Ok(())
    }

    /// Adds one unit per listed key to the overflow level.
    fn mark_overflow(&mut self, keys: &[u64], phase: Phase) -> Result<()> {
        let mut table: BTreeMap<u64, u64> = self
            .overflow
            .scan(&mut self.io, phase)?
            .into_iter()
            .map(|r| (r.key, r.count))
            .collect();
        for &k in keys {
            *table.entry(k).or_default() += 1;
        }
        let records = table
            .into_iter()
            .map(|(key, count)| Record { key, count, flags: FLAG_REPORTED })
            .collect();
        self.overflow.rebuild(records, &mut self.io, phase)?;
        Ok(())
    }

    /// Full scan of every level. Returns, sorted by key, each key whose
    /// consolidated count clears the report threshold, plus every key
    /// already reported.
    pub fn finalize_heavy_hitters(&mut self) -> Result<Vec<HeavyHitter>> {
        let mut acc: BTreeMap<u64, (u64, bool)> = BTreeMap::new();
        for (k, e) in self.level0.iter() {
            let a = acc.entry(k).or_default();
            a.0 += e.count;
            a.1 |= e.reported;
        }
        for level in &self.disk {
            for r in level.scan(&mut self.io, Phase::Query)? {
                let a = acc.entry(r.key).or_default();
                a.0 += r.count;
                a.1 |= r.reported();
            }
        }
        for r in self.overflow.scan(&mut self.io, Phase::Query)? {
            acc.entry(r.key).or_default().1 = true;
        }
        Ok(acc
            .into_iter()
            .filter(|&(_, (c, rep))| rep || c >= self.report_at)
            .map(|(key, (count, reported))| HeavyHitter { key, count, reported })
            .collect())
    }

    /// Per-level key counts, level 0 first, without charging I/O.
    pub fn level_counts(&self) -> Result<Vec<HashMap<u64, u64>>> {
        let mut out = vec![self.level0.iter().map(|(k, e)| (k, e.count)).collect()];
        for level in &self.disk {
            out.push(level.snapshot()?.into_iter().map(|r| (r.key, r.count)).collect());
        }
        Ok(out)
    }

    /// Contents of every disk level, overflow last, without charging I/O.
    pub fn disk_snapshot(&self) -> Result<Vec<Vec<Record>>> {
        let mut out = Vec::with_capacity(self.disk.len() + 1);
        for level in self.disk.iter().chain(std::iter::once(&self.overflow)) {
            out.push(level.snapshot()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Epsilon;
    use proptest::prelude::*;

    fn run(cfg: &DetectorConfig, stream: &[u64]) -> (Cascade, Vec<EventReport>) {
        let mut c = Cascade::new(cfg, &Storage::Memory).unwrap();
        let mut ev = Vec::new();
        for (i, &k) in stream.iter().enumerate() {
            ev.extend(c.insert(k, i as u64 + 1).unwrap());
        }
        (c, ev)
    }

    /// (key, index of its t-th occurrence) in order of that index.
    fn oracle(stream: &[u64], t: u64) -> Vec<(u64, u64)> {
        let mut counts: HashMap<u64, u64> = HashMap::new();
        let mut out = Vec::new();
        for (i, &k) in stream.iter().enumerate() {
            let c = counts.entry(k).or_default();
            *c += 1;
            if *c == t {
                out.push((k, i as u64 + 1));
            }
        }
        out
    }

    #[test]
    fn threshold_one_reports_every_first_occurrence() {
        let cfg = DetectorConfig::online(12, 1, 4, 2);
        let stream = [5, 6, 5, 7, 8, 9, 5, 10, 6, 11, 12, 13];
        let (_, ev) = run(&cfg, &stream);
        let got: Vec<(u64, u64)> = ev.iter().map(|e| (e.key, e.report_time)).collect();
        assert_eq!(got, oracle(&stream, 1));
        assert!(ev.iter().all(|e| e.trigger_time == Some(e.report_time)));
    }

    #[test]
    fn single_heavy_key_among_distinct_fillers() {
        let mut cfg = DetectorConfig::online(16, 8, 4, 2);
        cfg.epsilon = Epsilon::Fraction(1.0 / 16.0);
        let stream: Vec<u64> = (0..8).flat_map(|i| [1, 100 + i]).collect();
        let (_, ev) = run(&cfg, &stream);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].key, ev[0].report_time), (1, 15));
    }

    #[test]
    fn empty_flush_costs_nothing() {
        let cfg = DetectorConfig::online(100, 50, 4, 2);
        let (c, _) = run(&cfg, &[1, 1, 2, 2, 3, 4]);
        assert_eq!(c.io().total_blocks(), 0);
    }

    #[test]
    fn third_key_spills_three_units_into_level_one() {
        let mut cfg = DetectorConfig::online(64, 40, 2, 2);
        cfg.epsilon = Epsilon::Fraction(1.0 / 16.0);
        let (c, _) = run(&cfg, &[1, 2, 3]);
        let levels = c.level_counts().unwrap();
        assert!(levels[0].is_empty());
        assert_eq!(levels[1], HashMap::from([(1, 1), (2, 1), (3, 1)]));
        assert_eq!(cfg.level_capacity(1), 4);
    }

    #[test]
    fn consolidation_sums_and_stops_at_reported_bit() {
        let cfg = DetectorConfig::online(1000, 900, 2, 2);
        let mut c = Cascade::new(&cfg, &Storage::Memory).unwrap();
        let mut io = IoStats::new();
        c.level0.insert_entry(1, crate::mg::Entry { count: 2, ..Default::default() });
        c.disk[0].rebuild(vec![Record::new(1, 3)], &mut io, Phase::Flush).unwrap();
        c.disk[1].rebuild(vec![Record::new(1, 4), Record::new(2, 9)], &mut io, Phase::Flush).unwrap();
        assert_eq!(c.consolidate_query(1).unwrap(), (9, false));

        c.level0.insert_entry(5, crate::mg::Entry { count: 5, ..Default::default() });
        assert_eq!(c.consolidate_query(5).unwrap(), (5, false));

        c.disk[1]
            .rebuild(vec![Record::new(1, 4).with_reported(true)], &mut io, Phase::Flush)
            .unwrap();
        c.disk[2].rebuild(vec![Record::new(1, 100)], &mut io, Phase::Flush).unwrap();
        assert_eq!(c.consolidate_query(1).unwrap(), (9, true));
        assert!(c.level0.get(1).unwrap().reported);
    }

    #[test]
    fn finalize_on_small_streams() {
        let cfg = DetectorConfig::online(5, 3, 4, 2);
        let (mut c, _) = run(&cfg, &[]);
        assert!(c.finalize_heavy_hitters().unwrap().is_empty());

        let (mut c, ev) = run(&cfg, &[1, 1, 1, 2, 2]);
        assert_eq!(ev.len(), 1);
        let hh = c.finalize_heavy_hitters().unwrap();
        assert_eq!(hh, vec![HeavyHitter { key: 1, count: 3, reported: true }]);
    }

    #[test]
    fn rejects_out_of_order_time() {
        let cfg = DetectorConfig::online(10, 3, 4, 2);
        let mut c = Cascade::new(&cfg, &Storage::Memory).unwrap();
        c.insert(1, 2).unwrap();
        assert!(matches!(c.insert(1, 2), Err(Error::TimeOrder { .. })));
        assert!(matches!(c.insert(1, 11), Err(Error::PastEnd { .. })));
    }

    #[test]
    fn reported_bit_survives_eviction_to_overflow() {
        // RAM of one counter over a single disk level of two: key 1 is
        // reported, then pushed out of every counting level by fillers.
        let mut cfg = DetectorConfig::online(64, 40, 1, 1);
        cfg.epsilon = Epsilon::Fraction(0.5);
        assert_eq!(cfg.levels(), 2);
        let mut stream = vec![1; 12];
        stream.extend(100..140);
        let (mut c, ev) = run(&cfg, &stream);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].key, 1);
        let overflow = c.disk_snapshot().unwrap().pop().unwrap();
        assert!(overflow.iter().any(|r| r.key == 1 && r.reported()));
        let mut next = stream.len() as u64;
        for _ in 0..12 {
            next += 1;
            assert!(c.insert(1, next).unwrap().is_none());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_mode_matches_oracle(
            m in 1usize..6,
            t in 1u64..6,
            stream in prop::collection::vec(0u64..12, 1..160),
        ) {
            let n = stream.len() as u64;
            prop_assume!(t <= n);
            let cfg = DetectorConfig::online(n, t, m, 2);
            let (mut c, ev) = run(&cfg, &stream);
            let got: Vec<(u64, u64)> = ev.iter().map(|e| (e.key, e.report_time)).collect();
            prop_assert_eq!(got, oracle(&stream, t));
            prop_assert!(ev.iter().all(|e| e.count == t));
            let hh: Vec<u64> = c.finalize_heavy_hitters().unwrap().iter().map(|h| h.key).collect();
            let mut want: Vec<u64> = oracle(&stream, t).iter().map(|p| p.0).collect();
            want.sort_unstable();
            prop_assert_eq!(hh, want);
        }

        #[test]
        fn prefix_estimator_bound(
            m in 1usize..5,
            stream in prop::collection::vec(0u64..40, 1..300),
        ) {
            let n = stream.len() as u64;
            let cfg = DetectorConfig::online(n, n, m, 2);
            let mut c = Cascade::new(&cfg, &Storage::Memory).unwrap();
            let mut truth: HashMap<u64, u64> = HashMap::new();
            for (i, &k) in stream.iter().enumerate() {
                c.insert(k, i as u64 + 1).unwrap();
                *truth.entry(k).or_default() += 1;
                let levels = c.level_counts().unwrap();
                for (&key, &f) in &truth {
                    let mut prefix = 0u64;
                    for (j, lvl) in levels.iter().enumerate() {
                        prefix += lvl.get(&key).copied().unwrap_or(0);
                        prop_assert!(prefix <= f);
                        let slack = n as f64 / (cfg.r.powi(j as i32) * m as f64);
                        prop_assert!(((f - prefix) as f64) < slack);
                    }
                }
            }
        }
    }
}
