//! Stream generation and the exact-counting oracle.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Independent uniform draws from `0..universe`.
    Uniform,
    /// Per-key counts with `P(count > c) = c^-(theta - 1)`.
    PowerLaw { theta: f64 },
    /// Exact counts for the listed labels; any shortfall below `N` is
    /// filled with uniform background keys.
    Planted { counts: Vec<(String, u64)> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    #[default]
    Shuffled,
    /// One occurrence of each key per pass, in listing order.
    RoundRobin,
    /// All occurrences of a key back to back.
    Burst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub n: u64,
    pub universe: u64,
    pub distribution: Distribution,
    pub order: Order,
    pub seed: u64,
}

impl StreamSpec {
    pub fn uniform(n: u64, universe: u64, seed: u64) -> Self {
        Self { n, universe, distribution: Distribution::Uniform, order: Order::Shuffled, seed }
    }

    pub fn power_law(n: u64, theta: f64, seed: u64) -> Self {
        Self {
            n,
            universe: 0,
            distribution: Distribution::PowerLaw { theta },
            order: Order::Shuffled,
            seed,
        }
    }
}

/// Key for a planted label: decimal labels are taken literally, anything
/// else is hashed with 64-bit FNV-1a.
pub fn label_key(label: &str) -> u64 {
    if let Ok(k) = label.parse::<u64>() {
        return k;
    }
    label.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Draws per-key counts for a power-law stream of total exactly `n`.
/// The overshoot of the final draw is removed from the largest count.
pub fn power_law_counts(n: u64, theta: f64, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if theta.is_nan() || theta <= 1.0 {
        return Err(Error::Workload(format!("theta = {theta} must exceed 1")));
    }
    let mut counts = Vec::new();
    let mut total = 0u64;
    let inv = -1.0 / (theta - 1.0);
    while total < n {
        let u: f64 = rng.random();
        let x = (1.0 - u).powf(inv).round();
        let c = if x.is_finite() { (x as u64).clamp(1, n) } else { n };
        counts.push(c);
        total += c;
    }
    let excess = total - n;
    if excess > 0 {
        let (imax, _) = counts.iter().enumerate().max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i))).unwrap();
        counts[imax] -= excess;
    }
    Ok(counts)
}

/// Produces the stream described by `spec`. Deterministic in the seed.
pub fn generate(spec: &StreamSpec) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    // (key, count) in listing order, or a ready stream for shuffled uniform
    let tally: Vec<(u64, u64)> = match &spec.distribution {
        Distribution::Uniform => {
            if spec.universe == 0 {
                return Err(Error::Workload("uniform stream needs a nonempty universe".into()));
            }
            let draws: Vec<u64> = (0..n).map(|_| rng.random_range(0..spec.universe)).collect();
            if spec.order == Order::Shuffled {
                return Ok(draws);
            }
            tally_sorted(&draws)
        }
        Distribution::PowerLaw { theta } => power_law_counts(n, *theta, &mut rng)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| (splitmix64(i as u64), c))
            .collect(),
        Distribution::Planted { counts } => {
            let mut seen = HashSet::new();
            let mut tally = Vec::with_capacity(counts.len());
            let mut sum = 0u64;
            for (label, c) in counts {
                let key = label_key(label);
                if !seen.insert(key) {
                    return Err(Error::Workload(format!("label `{label}` planted twice")));
                }
                if *c == 0 {
                    return Err(Error::Workload(format!("label `{label}` has count 0")));
                }
                sum += c;
                tally.push((key, *c));
            }
            if sum > n {
                return Err(Error::Workload(format!("planted counts sum to {sum}, above N = {n}")));
            }
            let fill = n - sum;
            if fill > 0 {
                let free = spec.universe.saturating_sub(
                    seen.iter().filter(|&&k| k < spec.universe).count() as u64,
                );
                if free == 0 {
                    return Err(Error::Workload(format!(
                        "planted counts sum to {sum} < N = {n} and the universe has no background keys"
                    )));
                }
                let mut bg = Vec::with_capacity(fill as usize);
                while (bg.len() as u64) < fill {
                    let k = rng.random_range(0..spec.universe);
                    if !seen.contains(&k) {
                        bg.push(k);
                    }
                }
                tally.extend(tally_sorted(&bg));
            }
            tally
        }
    };
    Ok(arrange(&tally, spec.order, &mut rng))
}

fn tally_sorted(keys: &[u64]) -> Vec<(u64, u64)> {
    let mut m: HashMap<u64, u64> = HashMap::new();
    for &k in keys {
        *m.entry(k).or_default() += 1;
    }
    let mut v: Vec<_> = m.into_iter().collect();
    v.sort_unstable();
    v
}

fn arrange(tally: &[(u64, u64)], order: Order, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let total: u64 = tally.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(total as usize);
    match order {
        Order::Burst | Order::Shuffled => {
            for &(k, c) in tally {
                out.extend(std::iter::repeat_n(k, c as usize));
            }
            if order == Order::Shuffled {
                out.shuffle(rng);
            }
        }
        Order::RoundRobin => {
            let mut left: Vec<(u64, u64)> = tally.to_vec();
            while !left.is_empty() {
                for p in left.iter_mut() {
                    out.push(p.0);
                    p.1 -= 1;
                }
                left.retain(|p| p.1 > 0);
            }
        }
    }
    out
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Stream file bytes: packed little-endian `u64` for `.bin`, otherwise one
/// decimal key per line.
pub fn encode_stream(keys: &[u64], binary: bool) -> Vec<u8> {
    if binary {
        keys.iter().flat_map(|k| k.to_le_bytes()).collect()
    } else {
        let mut s = String::with_capacity(keys.len() * 8);
        for k in keys {
            let _ = writeln!(s, "{k}");
        }
        s.into_bytes()
    }
}

pub fn decode_stream(bytes: &[u8], binary: bool) -> Result<Vec<u64>> {
    if binary {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Parse(format!("binary stream of {} bytes is not whole keys", bytes.len())));
        }
        return Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad key `{}`", i + 1, l.trim())))
        })
        .collect()
}

pub fn write_stream(path: &Path, keys: &[u64]) -> Result<()> {
    std::fs::write(path, encode_stream(keys, is_binary(path)))?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<Vec<u64>> {
    decode_stream(&std::fs::read(path)?, is_binary(path))
}

/// One true event: the `T`-th occurrence of `key`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub key: u64,
    pub first_seen: u64,
    pub trigger_time: u64,
    /// `trigger_time - first_seen`.
    pub flow: u64,
    /// Latest report time allowed under stretch `alpha`: `t + alpha * flow`.
    pub deadline: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub counts: HashMap<u64, u64>,
    /// In trigger order.
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn count(&self, key: u64) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }
}

/// Exact single-pass ground truth. Times are 1-based stream indices.
pub fn oracle_events(stream: &[u64], t: u64, alpha: f64) -> GroundTruth {
    let mut counts: HashMap<u64, u64> = HashMap::new();
    let mut first: HashMap<u64, u64> = HashMap::new();
    let mut events = Vec::new();
    for (i, &k) in stream.iter().enumerate() {
        let time = i as u64 + 1;
        first.entry(k).or_insert(time);
        let c = counts.entry(k).or_default();
        *c += 1;
        if *c == t {
            let first_seen = first[&k];
            let flow = time - first_seen;
            let deadline = time + (alpha * flow as f64 + 1e-9).floor() as u64;
            events.push(TruthEvent { key: k, first_seen, trigger_time: time, flow, deadline });
        }
    }
    GroundTruth { counts, events }
}

pub const TRUTH_HEADER: &str = "key,first_seen,trigger_time,flow,deadline";

pub fn truth_to_csv(events: &[TruthEvent]) -> String {
    let mut out = format!("{TRUTH_HEADER}\n");
    for e in events {
        let _ = writeln!(out, "{},{},{},{},{}", e.key, e.first_seen, e.trigger_time, e.flow, e.deadline);
    }
    out
}

pub fn truth_from_csv(text: &str) -> Result<Vec<TruthEvent>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(TRUTH_HEADER) {
        return Err(Error::Parse(format!("ground truth must start with `{TRUTH_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<u64> = line
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Parse(format!("line {}: bad number", i + 1)))?;
        if f.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 fields", i + 1)));
        }
        out.push(TruthEvent { key: f[0], first_seen: f[1], trigger_time: f[2], flow: f[3], deadline: f[4] });
    }
    Ok(out)
}
