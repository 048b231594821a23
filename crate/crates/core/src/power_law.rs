//! Power-law filter.
//!
//! RAM holds `M` counters over `L` disk levels of growing size. Disk level
//! `i` may hold at most `tau_i` units of any one key. When RAM fills, the
//! shallowest prefix of levels `1..=j` that can absorb it is consolidated
//! (a shuffle merge) and every key is repacked bottom-up, `tau_j` units on
//! level `j` first, with whatever exceeds the budget left in RAM.
//!
//! Since disk holds at most `sum(tau)` units of a key, a RAM count of
//! `phi N - max(2 tau_1, sum tau)` triggers a sweep that consolidates the key
//! exactly. The key is then reported or pinned in RAM, where it keeps an
//! exact count and sits out all later merges.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::config::DetectorConfig;
use crate::em::{IoStats, LevelStore, Phase, Record, Storage};
use crate::error::{Error, Result};
use crate::mg::{Entry, MgTable};
use crate::report::EventReport;

/// `P(x > c) = c^-(theta - 1)` for a continuous power law with minimum 1.
pub fn powerlaw_tail_prob(c: f64, theta: f64) -> Result<f64> {
    if c.is_nan() || theta.is_nan() || c < 1.0 || theta <= 1.0 {
        return Err(Error::Config(format!("tail probability needs c >= 1 and theta > 1, got c = {c}, theta = {theta}")));
    }
    Ok(c.powf(-(theta - 1.0)))
}

/// For each level `l` in `0..=L`, the number of keys whose count exceeds
/// the total threshold budget below it, `sum(tau[l+1..=L])`. `tau[0]` is
/// ignored.
pub fn pinned_per_level(counts: impl IntoIterator<Item = u64>, tau: &[u64]) -> Vec<usize> {
    let l = tau.len() - 1;
    let mut below = vec![0u64; l + 1];
    for lvl in (0..l).rev() {
        below[lvl] = below[lvl + 1] + tau[lvl + 1];
    }
    let mut out = vec![0usize; l + 1];
    for c in counts {
        for (lvl, &b) in below.iter().enumerate() {
            if c > b {
                out[lvl] += 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PowerLawCounters {
    pub sweeps: u64,
    pub merges: u64,
    pub reports: u64,
}

/// How one dynamic threshold was chosen during a merge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdChoice {
    pub level: usize,
    pub old: u64,
    pub new: u64,
    /// Residual count of each key present one level up before the merge.
    pub residuals: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeSnapshot {
    pub merge: u64,
    pub target: usize,
    pub choices: Vec<ThresholdChoice>,
}

/// RAM count and pinned bit per resident key.
pub type ResidentKeys = HashMap<u64, (u64, bool)>;
/// Live records per disk level, shallowest first.
pub type LevelRecords = Vec<Vec<Record>>;

pub struct PowerLawFilter {
    cfg: DetectorConfig,
    report_at: u64,
    ram: MgTable,
    disk: Vec<LevelStore>,
    tau: Vec<u64>,
    line: f64,
    reported: HashSet<u64>,
    io: IoStats,
    time: u64,
    counters: PowerLawCounters,
    trace: Vec<(u64, Vec<u64>)>,
    snapshots: Option<Vec<MergeSnapshot>>,
}

struct Plan {
    tau: Vec<u64>,
    choices: Vec<ThresholdChoice>,
    /// Placements per level `1..=j`, index 0 is RAM.
    placed: Vec<Vec<(u64, u64)>>,
    report: Vec<(u64, u64)>,
}

impl PowerLawFilter {
    pub fn new(cfg: &DetectorConfig, storage: &Storage) -> Result<Self> {
        cfg.validate()?;
        if cfg.theta.is_none() && !cfg.dynamic_thresholds {
            return Err(Error::Config("static thresholds need theta".into()));
        }
        let l = cfg.pl_levels();
        let disk = (1..=l)
            .map(|i| LevelStore::create(&format!("p{i}"), Some(cfg.pl_capacity(i)), cfg.b, storage))
            .collect::<Result<Vec<_>, _>>()?;
        let tau = if cfg.dynamic_thresholds { vec![0; l + 1] } else { cfg.static_thresholds() };
        Ok(Self {
            cfg: cfg.clone(),
            report_at: cfg.report_threshold(),
            ram: MgTable::new(cfg.m),
            disk,
            line: cfg.sweep_line(&tau),
            tau,
            reported: HashSet::new(),
            io: IoStats::new(),
            time: 0,
            counters: PowerLawCounters::default(),
            trace: Vec::new(),
            snapshots: None,
        })
    }

    /// Keeps the residuals behind every dynamic threshold choice.
    pub fn record_snapshots(&mut self) {
        self.snapshots = Some(Vec::new());
    }

    pub fn snapshots(&self) -> &[MergeSnapshot] {
        self.snapshots.as_deref().unwrap_or(&[])
    }

    pub fn io(&self) -> &IoStats {
        &self.io
    }

    pub fn counters(&self) -> PowerLawCounters {
        self.counters
    }

    /// Current thresholds, `tau[1..=L]`; `tau[0]` is unused.
    pub fn thresholds(&self) -> &[u64] {
        &self.tau
    }

    /// `(merge index, thresholds after it)` for every merge, dynamic mode only.
    pub fn threshold_trace(&self) -> &[(u64, Vec<u64>)] {
        &self.trace
    }

    pub fn sweep_line(&self) -> f64 {
        self.line
    }

    pub fn levels(&self) -> usize {
        self.disk.len()
    }

    pub fn insert(&mut self, key: u64, time: u64) -> Result<Vec<EventReport>> {
        if time <= self.time {
            return Err(Error::TimeOrder { prev: self.time, got: time });
        }
        if time > self.cfg.n {
            return Err(Error::PastEnd { got: time, n: self.cfg.n });
        }
        self.time = time;
        let mut out = Vec::new();
        if self.reported.contains(&key) {
            return Ok(out);
        }
        if let Some(e) = self.ram.get_mut(key) {
            e.count += 1;
        } else {
            if self.ram.is_full() {
                out.extend(self.shuffle_merge(time)?);
                if self.reported.contains(&key) {
                    return Ok(out);
                }
            }
            if let Some(e) = self.ram.get_mut(key) {
                e.count += 1;
            } else if self.ram.is_full() {
                return Err(Error::Clog { level: 0 });
            } else {
                self.ram.insert_entry(key, Entry { count: 1, ..Entry::default() });
            }
        }
        let e = *self.ram.get(key).expect("just inserted");
        if e.count >= self.report_at {
            out.push(self.report_from_ram(key, time, e.count));
        } else if !e.pinned && e.count as f64 >= self.line {
            out.extend(self.sweep(key, time)?);
        }
        Ok(out)
    }

    fn report_from_ram(&mut self, key: u64, time: u64, count: u64) -> EventReport {
        self.ram.remove(key);
        self.reported.insert(key);
        self.counters.reports += 1;
        EventReport::on_time(key, time, count)
    }

    /// Consolidates `key` over every level. Reports it or pins it in RAM
    /// with the exact total.
    fn sweep(&mut self, key: u64, time: u64) -> Result<Option<EventReport>> {
        self.counters.sweeps += 1;
        let mut total = self.ram.estimate(key);
        for level in &self.disk {
            if let Some(r) = level.point_query(key, &mut self.io, Phase::Sweep)? {
                total += r.count;
            }
        }
        if total >= self.report_at {
            return Ok(Some(self.report_from_ram(key, time, total)));
        }
        let e = self.ram.get_mut(key).expect("swept keys are resident");
        e.count = total;
        e.pinned = true;
        Ok(None)
    }

    fn stale(&self, key: u64) -> bool {
        self.reported.contains(&key) || self.ram.get(key).is_some_and(|e| e.pinned)
    }

    /// Consolidates RAM into the shallowest prefix of disk levels that can
    /// take the repacked result.
    fn shuffle_merge(&mut self, time: u64) -> Result<Vec<EventReport>> {
        self.counters.merges += 1;
        let merge = self.counters.merges;
        let pinned = self.ram.iter().filter(|(_, e)| e.pinned).count();
        // presence[y] = keys on level y before the merge (0 is RAM)
        let mut presence: Vec<Vec<u64>> =
            vec![self.ram.iter().filter(|(_, e)| !e.pinned).map(|(k, _)| k).collect()];
        let mut cons: BTreeMap<u64, u64> =
            self.ram.iter().filter(|(_, e)| !e.pinned).map(|(k, e)| (k, e.count)).collect();
        let mut first_over = 0;
        for j in 1..=self.levels() {
            let recs = self.disk[j - 1].scan(&mut self.io, Phase::Flush)?;
            let mut here = Vec::with_capacity(recs.len());
            for r in recs {
                if !self.stale(r.key) {
                    *cons.entry(r.key).or_default() += r.count;
                    here.push(r.key);
                }
            }
            presence.push(here);
            let plan = self.plan(j, &cons, &presence);
            let over = (1..=j).find(|&y| plan.placed[y].len() > self.cfg.pl_capacity(y));
            let ram_after = pinned + plan.placed[0].len();
            match over {
                None if ram_after < self.cfg.m => return self.commit(merge, j, plan, time),
                Some(y) => first_over = y,
                None => first_over = 0,
            }
        }
        Err(Error::Clog { level: first_over })
    }

    fn plan(&self, j: usize, cons: &BTreeMap<u64, u64>, presence: &[Vec<u64>]) -> Plan {
        let mut tau = self.tau.clone();
        let mut choices = Vec::new();
        let leaving = |k: &u64| cons[k] >= self.report_at;
        if self.cfg.dynamic_thresholds {
            for y in (1..=j).rev() {
                let budget: u64 = tau[y + 1..=j].iter().sum();
                let mut residuals: Vec<u64> = presence[y - 1]
                    .iter()
                    .filter(|k| !leaving(k))
                    .map(|k| cons[k].saturating_sub(budget))
                    .collect();
                if residuals.is_empty() {
                    continue;
                }
                residuals.sort_unstable();
                let need = residuals.len().div_ceil(2);
                let old = tau[y];
                tau[y] = old.max(residuals[need - 1]);
                choices.push(ThresholdChoice { level: y, old, new: tau[y], residuals });
            }
        }
        let mut placed = vec![Vec::new(); j + 1];
        let mut report = Vec::new();
        for (&k, &c) in cons {
            if c >= self.report_at {
                report.push((k, c));
                continue;
            }
            let mut rem = c;
            for y in (1..=j).rev() {
                let put = rem.min(tau[y]);
                if put > 0 {
                    placed[y].push((k, put));
                    rem -= put;
                }
            }
            if rem > 0 {
                placed[0].push((k, rem));
            }
        }
        Plan { tau, choices, placed, report }
    }

    fn commit(&mut self, merge: u64, j: usize, plan: Plan, time: u64) -> Result<Vec<EventReport>> {
        let Plan { tau, choices, placed, report } = plan;
        let mut placed = placed.into_iter();
        let ram_part = placed.next().expect("RAM slot");
        for (y, recs) in placed.enumerate() {
            let records = recs.into_iter().map(|(k, c)| Record::new(k, c)).collect();
            self.disk[y].rebuild(records, &mut self.io, Phase::Flush)?;
        }
        let unpinned: Vec<u64> = self.ram.iter().filter(|(_, e)| !e.pinned).map(|(k, _)| k).collect();
        for k in unpinned {
            self.ram.remove(k);
        }
        for (k, c) in ram_part {
            self.ram.insert_entry(k, Entry { count: c, ..Entry::default() });
        }
        let mut out = Vec::with_capacity(report.len());
        for (k, c) in report {
            self.reported.insert(k);
            self.counters.reports += 1;
            out.push(EventReport::deferred(k, time, c));
        }
        if self.cfg.dynamic_thresholds {
            self.tau = tau;
            self.line = self.cfg.sweep_line(&self.tau);
            self.trace.push((merge, self.tau[1..].to_vec()));
            if let Some(s) = self.snapshots.as_mut() {
                s.push(MergeSnapshot { merge, target: j, choices });
            }
        }
        Ok(out)
    }

    /// End-of-stream consolidation of every level; reports what is still
    /// pending at the current time.
    pub fn finalize(&mut self) -> Result<Vec<EventReport>> {
        let mut cons: BTreeMap<u64, u64> = self.ram.iter().map(|(k, e)| (k, e.count)).collect();
        for level in &self.disk {
            for r in level.scan(&mut self.io, Phase::Query)? {
                if !self.stale(r.key) {
                    *cons.entry(r.key).or_default() += r.count;
                }
            }
        }
        let mut out = Vec::new();
        for (k, c) in cons {
            if c >= self.report_at && self.reported.insert(k) {
                self.counters.reports += 1;
                out.push(EventReport::deferred(k, self.time, c));
            }
        }
        Ok(out)
    }

    /// `(RAM count, pinned)` of resident keys and live disk records per
    /// level `1..=L`, without charging I/O. Records of swept or reported
    /// keys are left out.
    pub fn snapshot(&self) -> Result<(ResidentKeys, LevelRecords)> {
        let ram = self.ram.iter().map(|(k, e)| (k, (e.count, e.pinned))).collect();
        let mut disk = Vec::with_capacity(self.levels());
        for level in &self.disk {
            disk.push(level.snapshot()?.into_iter().filter(|r| !self.stale(r.key)).collect());
        }
        Ok((ram, disk))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(cfg: &DetectorConfig, stream: &[u64]) -> Result<(PowerLawFilter, Vec<EventReport>)> {
        let mut f = PowerLawFilter::new(cfg, &Storage::Memory)?;
        let mut ev = Vec::new();
        for (i, &k) in stream.iter().enumerate() {
            ev.extend(f.insert(k, i as u64 + 1)?);
        }
        Ok((f, ev))
    }

    #[test]
    fn tail_probability() {
        assert_eq!(powerlaw_tail_prob(1.0, 2.7).unwrap(), 1.0);
        assert!((powerlaw_tail_prob(10.0, 3.0).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(powerlaw_tail_prob(256.0, 2.0).unwrap(), 1.0 / 256.0);
        assert!(powerlaw_tail_prob(0.5, 2.0).is_err());
        assert!(powerlaw_tail_prob(2.0, 1.0).is_err());
    }

    #[test]
    fn pinned_counts_against_budget() {
        // budgets below levels 0..=2: 5, 2, 0
        let tau = [0, 3, 2];
        assert_eq!(pinned_per_level([1, 2, 3, 6], &tau), vec![1, 2, 4]);
    }

    #[test]
    fn threshold_one_reports_first_occurrences_without_io() {
        let cfg = DetectorConfig::power_law(1000, 1, 4, 4, 2.0);
        let stream: Vec<u64> = (0..50).chain(0..50).collect();
        let (f, ev) = run(&cfg, &stream).unwrap();
        assert_eq!(ev.len(), 50);
        assert!(ev.iter().enumerate().all(|(i, e)| e.key == i as u64 && e.report_time == i as u64 + 1));
        assert_eq!(f.io().total_blocks(), 0);
        assert_eq!(f.counters().sweeps, 0);
    }

    #[test]
    fn sweep_of_resident_key_reads_each_level_once() {
        let mut cfg = DetectorConfig::power_law(1024, 600, 8, 4, 2.0);
        cfg.dynamic_thresholds = true;
        let mut f = PowerLawFilter::new(&cfg, &Storage::Memory).unwrap();
        f.insert(9, 1).unwrap();
        assert_eq!(f.sweep(9, 2).unwrap(), None);
        // all levels empty: nothing to read
        assert_eq!(f.io().total_reads(), 0);
        assert!(f.ram.get(9).unwrap().pinned);
    }

    #[test]
    fn repack_places_bottom_up() {
        let mut cfg = DetectorConfig::power_law(1024, 1000, 8, 4, 2.0);
        cfg.m = 8;
        let f = PowerLawFilter::new(&cfg, &Storage::Memory).unwrap();
        let tau = f.thresholds().to_vec();
        let (t2, t1) = (tau[2], tau[1]);
        let cons = BTreeMap::from([(1, 3), (2, t2 + t1 + 3)]);
        let presence = vec![vec![1, 2], vec![], vec![]];
        let plan = f.plan(2, &cons, &presence);
        assert_eq!(plan.placed[2], vec![(1, 3), (2, t2)]);
        assert_eq!(plan.placed[1], vec![(2, t1)]);
        assert_eq!(plan.placed[0], vec![(2, 3)]);
    }

    #[test]
    fn first_dynamic_merge_takes_median_of_ram() {
        let mut cfg = DetectorConfig::power_law(10_000, 9_000, 4, 4, 2.0);
        cfg.dynamic_thresholds = true;
        let mut f = PowerLawFilter::new(&cfg, &Storage::Memory).unwrap();
        f.record_snapshots();
        // RAM counts 5, 1, 3, 2 then a fifth key forces the merge
        let stream = [1, 1, 1, 1, 1, 2, 3, 3, 3, 4, 4, 5];
        run_into(&mut f, &stream);
        let snap = &f.snapshots()[0];
        assert_eq!(snap.target, 1);
        // brute force: the least tau letting at least 2 of 4 keys leave RAM
        let counts = [5u64, 1, 3, 2];
        let brute = (0..).find(|t| counts.iter().filter(|&&c| c <= *t).count() >= 2).unwrap();
        assert_eq!(f.thresholds()[1], brute);
        assert_eq!(brute, 2);
    }

    fn run_into(f: &mut PowerLawFilter, stream: &[u64]) {
        for (i, &k) in stream.iter().enumerate() {
            f.insert(k, i as u64 + 1).unwrap();
        }
    }

    #[test]
    fn clogged_ram_is_an_error() {
        // every resident key gets pinned by a sweep, leaving nothing to merge
        let mut cfg = DetectorConfig::power_law(100, 90, 2, 2, 2.0);
        cfg.dynamic_thresholds = true;
        let mut f = PowerLawFilter::new(&cfg, &Storage::Memory).unwrap();
        f.insert(1, 1).unwrap();
        f.insert(2, 2).unwrap();
        f.sweep(1, 2).unwrap();
        f.sweep(2, 2).unwrap();
        assert!(matches!(f.insert(3, 3), Err(Error::Clog { level: 0 })));
    }

    fn check_invariants(f: &PowerLawFilter, truth: &HashMap<u64, u64>) -> std::result::Result<(), TestCaseError> {
        let (ram, disk) = f.snapshot().unwrap();
        let tau = f.thresholds();
        let mut on_disk: HashMap<u64, u64> = HashMap::new();
        for (i, level) in disk.iter().enumerate() {
            for r in level {
                prop_assert!(r.count <= tau[i + 1], "level {} holds {} of key {}", i + 1, r.count, r.key);
                *on_disk.entry(r.key).or_default() += r.count;
            }
        }
        let budget = (2 * tau[1]).max(tau.iter().sum());
        for (&k, &fk) in truth {
            if f.reported.contains(&k) {
                continue;
            }
            let (c, pinned) = ram.get(&k).copied().unwrap_or((0, false));
            if pinned {
                prop_assert_eq!(c, fk);
            } else {
                prop_assert!(c <= fk && fk <= c + budget);
                prop_assert_eq!(c + on_disk.get(&k).copied().unwrap_or(0), fk);
            }
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_mode_matches_oracle_and_keeps_invariants(
            dynamic in any::<bool>(),
            m in 3usize..8,
            stream in prop::collection::vec(0u64..25, 1..300),
        ) {
            let n = stream.len() as u64;
            let mut cfg = DetectorConfig::power_law(n, 1, m, 2, 2.0);
            cfg.dynamic_thresholds = dynamic;
            let line_budget = cfg.phi_n() - cfg.sweep_line(&cfg.static_thresholds());
            cfg.threshold = crate::config::Threshold::Count((line_budget as u64 + 3).min(n));
            let mut f = PowerLawFilter::new(&cfg, &Storage::Memory).unwrap();
            let mut truth: HashMap<u64, u64> = HashMap::new();
            let mut want = Vec::new();
            let mut got = Vec::new();
            for (i, &k) in stream.iter().enumerate() {
                let time = i as u64 + 1;
                let c = truth.entry(k).or_default();
                *c += 1;
                if *c == cfg.t() {
                    want.push((k, time));
                }
                match f.insert(k, time) {
                    Ok(ev) => got.extend(ev.iter().map(|e| (e.key, e.report_time))),
                    Err(Error::Clog { .. }) => return Ok(()),
                    Err(e) => panic!("{e}"),
                }
                check_invariants(&f, &truth)?;
            }
            prop_assert!(f.finalize().unwrap().is_empty());
            prop_assert_eq!(got, want);
            for w in f.threshold_trace().windows(2) {
                prop_assert!(w[0].1.iter().zip(&w[1].1).all(|(a, b)| a <= b));
            }
        }
    }
}
