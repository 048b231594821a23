//! Time-stretch filter.
//!
//! Every level is split into `q` bins. Level 0 lives in RAM and each
//! arrival lands in its first bin. Bins shift on a fixed clock: level `i`
//! shifts after every `c_i = r^i * floor(M/q)` arrivals, and the bin that
//! falls off its end is merged into the first bin of level `i + 1`. The
//! last level keeps whatever falls off its own end in its last bin.
//!
//! A key is reported when the counts it holds across the levels touched by
//! a flush reach the threshold. A unit at level `l` has aged at least
//! `(q - 1) * c_(l-1)` arrivals, and level `l` is consolidated every
//! `c_(l-1)` arrivals, so every event at time `t` with flow time `F` is
//! reported by `t + F / (q - 1)`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use crate::config::DetectorConfig;
use crate::em::{IoStats, LevelStore, Phase, Record, Storage, FLAG_REPORTED};
use crate::error::{Error, Result};
use crate::report::EventReport;

type Bin = BTreeMap<u64, (u64, u8)>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StretchCounters {
    pub flushes: u64,
    pub reports: u64,
}

pub struct TimeStretchFilter {
    cfg: DetectorConfig,
    report_at: u64,
    q: usize,
    /// Count capacity of one bin, per level.
    bin_cap: Vec<u64>,
    ram: VecDeque<HashMap<u64, u64>>,
    /// `disk[i - 1][j]` is bin `j + 1` of level `i`.
    disk: Vec<Vec<LevelStore>>,
    reported: HashSet<u64>,
    io: IoStats,
    time: u64,
    counters: StretchCounters,
    flush_log: Vec<(u64, usize)>,
}

impl TimeStretchFilter {
    pub fn new(cfg: &DetectorConfig, storage: &Storage) -> Result<Self> {
        cfg.validate()?;
        if cfg.r.fract() != 0.0 || cfg.r < 2.0 {
            return Err(Error::Config(format!("time-stretch needs an integer r >= 2, got {}", cfg.r)));
        }
        let q = cfg.bins();
        let r = cfg.r as u64;
        let levels = cfg.levels().max(2);
        let c0 = (cfg.m / q) as u64;
        let bin_cap: Vec<u64> = (0..levels).map(|i| c0 * r.pow(i as u32)).collect();
        let mut disk = Vec::with_capacity(levels - 1);
        for (i, &c) in bin_cap.iter().enumerate().skip(1) {
            let cap = (i + 1 < levels).then_some(c as usize);
            let bins = (1..=q)
                .map(|j| LevelStore::create(&format!("ts{i}b{j}"), cap, cfg.b, storage))
                .collect::<Result<Vec<_>, _>>()?;
            disk.push(bins);
        }
        Ok(Self {
            cfg: cfg.clone(),
            report_at: cfg.report_threshold(),
            q,
            bin_cap,
            ram: (0..q).map(|_| HashMap::new()).collect(),
            disk,
            reported: HashSet::new(),
            io: IoStats::new(),
            time: 0,
            counters: StretchCounters::default(),
            flush_log: Vec::new(),
        })
    }

    pub fn io(&self) -> &IoStats {
        &self.io
    }

    pub fn counters(&self) -> StretchCounters {
        self.counters
    }

    pub fn bins(&self) -> usize {
        self.q
    }

    pub fn levels(&self) -> usize {
        self.bin_cap.len()
    }

    /// Count capacity of a bin at `level`.
    pub fn bin_capacity(&self, level: usize) -> u64 {
        self.bin_cap[level]
    }

    /// `(time, deepest shifted level)` for every flush so far.
    pub fn flush_log(&self) -> &[(u64, usize)] {
        &self.flush_log
    }

    pub fn insert(&mut self, key: u64, time: u64) -> Result<Vec<EventReport>> {
        if time <= self.time {
            return Err(Error::TimeOrder { prev: self.time, got: time });
        }
        if time > self.cfg.n {
            return Err(Error::PastEnd { got: time, n: self.cfg.n });
        }
        self.time = time;
        *self.ram[0].entry(key).or_default() += 1;

        let mut out = Vec::new();
        if !self.reported.contains(&key) {
            let in_ram: u64 = self.ram.iter().filter_map(|b| b.get(&key)).sum();
            if in_ram >= self.report_at {
                self.reported.insert(key);
                self.counters.reports += 1;
                out.push(EventReport::deferred(key, time, in_ram));
            }
        }
        if time.is_multiple_of(self.bin_cap[0]) {
            let deepest = (0..self.levels())
                .take_while(|&i| time.is_multiple_of(self.bin_cap[i]))
                .last()
                .unwrap_or(0);
            out.extend(self.flush(deepest, time)?);
        }
        Ok(out)
    }

    /// Shifts levels `0..=deepest` and consolidates every level touched.
    fn flush(&mut self, deepest: usize, time: u64) -> Result<Vec<EventReport>> {
        self.counters.flushes += 1;
        self.flush_log.push((time, deepest));
        let last = self.levels() - 1;
        let touched = (deepest + 1).min(last);

        let mut levels: Vec<VecDeque<Bin>> = Vec::with_capacity(touched);
        for bins in &self.disk[..touched] {
            let mut loaded = VecDeque::with_capacity(self.q);
            for store in bins {
                let bin: Bin = store
                    .scan(&mut self.io, Phase::Flush)?
                    .into_iter()
                    .map(|r| (r.key, (r.count, r.flags)))
                    .collect();
                loaded.push_back(bin);
            }
            levels.push(loaded);
        }

        let ram_full: u64 = self.ram[0].values().sum();
        if ram_full != self.bin_cap[0] {
            return Err(Error::Internal(format!(
                "level-0 first bin holds {ram_full} at a flush, capacity {}",
                self.bin_cap[0]
            )));
        }
        let popped = self.ram.pop_back().expect("q >= 2");
        self.ram.push_front(HashMap::new());
        let mut carry: Bin = popped
            .into_iter()
            .map(|(k, c)| (k, (c, if self.reported.contains(&k) { FLAG_REPORTED } else { 0 })))
            .collect();
        for i in 1..=deepest.min(last) {
            merge(&mut levels[i - 1][0], carry);
            let lvl = &mut levels[i - 1];
            if i < last {
                carry = lvl.pop_back().expect("q >= 2");
                lvl.push_front(Bin::new());
            } else {
                let tail = lvl.pop_back().expect("q >= 2");
                lvl.push_front(Bin::new());
                merge(lvl.back_mut().expect("q >= 2"), tail);
                carry = Bin::new();
            }
        }
        if deepest < last {
            merge(&mut levels[deepest][0], carry);
        }

        // consolidate RAM and every touched level
        let mut sums: BTreeMap<u64, u64> = BTreeMap::new();
        for bin in &self.ram {
            for (&k, &c) in bin {
                *sums.entry(k).or_default() += c;
            }
        }
        for lvl in &levels {
            for bin in lvl {
                for (&k, &(c, _)) in bin {
                    *sums.entry(k).or_default() += c;
                }
            }
        }
        let mut out = Vec::new();
        for (k, c) in sums {
            if c >= self.report_at && self.reported.insert(k) {
                self.counters.reports += 1;
                out.push(EventReport::deferred(k, time, c));
            }
        }

        for (i, lvl) in levels.into_iter().enumerate() {
            for (j, bin) in lvl.into_iter().enumerate() {
                let level = i + 1;
                if level < last {
                    let sum: u64 = bin.values().map(|e| e.0).sum();
                    if sum > self.bin_cap[level] {
                        return Err(Error::Internal(format!(
                            "bin {} of level {level} holds {sum}, capacity {}",
                            j + 1,
                            self.bin_cap[level]
                        )));
                    }
                }
                let records = bin
                    .into_iter()
                    .map(|(key, (count, mut flags))| {
                        if self.reported.contains(&key) {
                            flags |= FLAG_REPORTED;
                        }
                        Record { key, count, flags }
                    })
                    .collect();
                self.disk[i][j].rebuild(records, &mut self.io, Phase::Flush)?;
            }
        }
        Ok(out)
    }

    /// End-of-stream scan of every level; reports what is still pending at
    /// the current time.
    pub fn finalize(&mut self) -> Result<Vec<EventReport>> {
        let mut sums: BTreeMap<u64, u64> = BTreeMap::new();
        for bin in &self.ram {
            for (&k, &c) in bin {
                *sums.entry(k).or_default() += c;
            }
        }
        for bins in &self.disk {
            for store in bins {
                for r in store.scan(&mut self.io, Phase::Query)? {
                    *sums.entry(r.key).or_default() += r.count;
                }
            }
        }
        let mut out = Vec::new();
        for (k, c) in sums {
            if c >= self.report_at && self.reported.insert(k) {
                self.counters.reports += 1;
                out.push(EventReport::deferred(k, self.time, c));
            }
        }
        Ok(out)
    }

    /// Per-level, per-bin contents, level 0 first, without charging I/O.
    pub fn snapshot(&self) -> Result<Vec<Vec<Vec<Record>>>> {
        let mut out = Vec::with_capacity(self.levels());
        out.push(
            self.ram
                .iter()
                .map(|b| {
                    let mut v: Vec<Record> = b.iter().map(|(&k, &c)| Record::new(k, c)).collect();
                    v.sort_unstable_by_key(|r| r.key);
                    v
                })
                .collect(),
        );
        for bins in &self.disk {
            out.push(bins.iter().map(|s| s.snapshot()).collect::<Result<_, _>>()?);
        }
        Ok(out)
    }
}

fn merge(into: &mut Bin, from: Bin) {
    for (k, (c, f)) in from {
        let e = into.entry(k).or_insert((0, 0));
        e.0 += c;
        e.1 |= f;
    }
}
