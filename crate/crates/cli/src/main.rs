use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use oedp::bench::{bench, rows_to_csv, BenchGrid, BenchStream};
use oedp::report::events_from_csv;
use oedp::run::{execute, replay, RunManifest};
use oedp::verify::{verify, VerifySpec};
use oedp::workload::{
    encode_stream, generate, oracle_events, read_stream, truth_from_csv, truth_to_csv, write_stream,
    Distribution, Order, StreamSpec,
};
use oedp::{DetectorConfig, Epsilon, Mode, Storage, Stretch, Threshold};

/// Online event detection over external-memory streams.
#[derive(Parser)]
#[command(name = "oedp", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded stream file.
    Generate(GenerateArgs),
    /// Exact ground-truth events for a stream.
    Truth(TruthArgs),
    /// Run a detector over a stream and write events, I/O stats and a manifest.
    Run(RunArgs),
    /// Check an events CSV against a ground-truth CSV.
    Verify(VerifyArgs),
    /// Amortized blocks per item over a configuration grid.
    Bench(BenchArgs),
    /// Re-run a manifest and compare its outputs byte for byte.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Powerlaw,
    Planted,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Shuffled,
    RoundRobin,
    Burst,
}

impl From<OrderArg> for Order {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Shuffled => Order::Shuffled,
            OrderArg::RoundRobin => Order::RoundRobin,
            OrderArg::Burst => Order::Burst,
        }
    }
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long, value_enum)]
    dist: Option<Dist>,
    /// Universe size for uniform keys and planted background.
    #[arg(long, value_parser = parse_count)]
    u: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "shuffled")]
    order: OrderArg,
    /// Planted counts, e.g. `a:3,b:1`. Implies `--dist planted`.
    #[arg(long, value_parser = parse_planted)]
    planted: Option<PlantedList>,
}

#[derive(Clone)]
struct PlantedList(Vec<(String, u64)>);

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_count)]
    n: Option<u64>,
    #[arg(long)]
    theta: Option<f64>,
    #[command(flatten)]
    stream: StreamArgs,
    /// Output path; `.bin` is packed u64, anything else one key per line.
    /// Writes text to stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    stream: PathBuf,
    #[arg(long, value_parser = parse_count, conflicts_with = "phi", required_unless_present = "phi")]
    t: Option<u64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, conflicts_with = "q")]
    alpha: Option<f64>,
    /// Bins per level; sets alpha = 1/(q-1).
    #[arg(long)]
    q: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DetectorArgs {
    #[arg(long, default_value = "online")]
    mode: Mode,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    b: usize,
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    /// `exact` (1/N) or a fraction.
    #[arg(long, default_value = "exact", value_parser = parse_epsilon)]
    epsilon: Epsilon,
    #[arg(long, value_parser = parse_count, conflicts_with = "phi", required_unless_present = "phi")]
    t: Option<u64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, conflicts_with = "alpha")]
    q: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Learn power-law thresholds instead of the static formula.
    #[arg(long)]
    dynamic: bool,
}

impl DetectorArgs {
    fn config(&self, n: u64) -> DetectorConfig {
        let threshold = match (self.t, self.phi) {
            (Some(t), _) => Threshold::Count(t),
            (None, Some(phi)) => Threshold::Fraction(phi),
            (None, None) => unreachable!("clap requires --t or --phi"),
        };
        let stretch = match (self.q, self.alpha) {
            (_, Some(a)) => Stretch::Alpha(a),
            (q, None) => Stretch::Bins(q.unwrap_or(2)),
        };
        DetectorConfig {
            n,
            threshold,
            epsilon: self.epsilon,
            m: self.m,
            b: self.b,
            r: self.r,
            mode: self.mode,
            stretch,
            theta: self.theta,
            dynamic_thresholds: self.dynamic,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    det: DetectorArgs,
    /// Declared stream length; defaults to the stream's length.
    #[arg(long, value_parser = parse_count)]
    n: Option<u64>,
    /// Keep levels in files under this directory instead of in memory.
    #[arg(long)]
    storage_dir: Option<PathBuf>,
    #[arg(long, default_value = "oedp-run")]
    out: PathBuf,
    /// Check the events against the exact oracle and record the verdict.
    #[arg(long)]
    verify: bool,
    /// Run even if the mode's scalability precondition fails. The detector
    /// stays correct; only its I/O bound is lost.
    #[arg(long)]
    force: bool,
    stream: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    events: PathBuf,
    truth: PathBuf,
    #[arg(long, default_value = "online")]
    mode: Mode,
    /// Skip exact set equality; only false negatives, timeliness and the
    /// forbidden band are checked.
    #[arg(long)]
    approximate: bool,
    /// Stream length, caps time-stretch deadlines.
    #[arg(long, value_parser = parse_count)]
    n: Option<u64>,
    /// Reports for keys whose final count is at or below this fail.
    #[arg(long, value_parser = parse_count, requires = "stream")]
    forbid_at_or_below: Option<u64>,
    /// Stream the truth was computed from, for final counts.
    #[arg(long)]
    stream: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    det: DetectorArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_count, required = true)]
    n: Vec<u64>,
    #[arg(long = "m-grid", value_delimiter = ',')]
    m_grid: Vec<usize>,
    #[arg(long = "b-grid", value_delimiter = ',')]
    b_grid: Vec<usize>,
    #[arg(long = "r-grid", value_delimiter = ',')]
    r_grid: Vec<f64>,
    /// T (online), q (time-stretch) or theta (power-law) values.
    #[arg(long, value_delimiter = ',')]
    param: Vec<f64>,
    #[command(flatten)]
    gen: StreamArgs,
    /// Fixed stream file instead of generating one per `n`.
    #[arg(long, conflicts_with = "dist")]
    stream: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 => Ok(v as u64),
        _ => Err(format!("`{s}` is not a nonnegative integer")),
    }
}

fn parse_epsilon(s: &str) -> Result<Epsilon, String> {
    if s == "exact" {
        return Ok(Epsilon::Exact);
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 && e < 1.0 => Ok(Epsilon::Fraction(e)),
        _ => Err(format!("`{s}` is neither `exact` nor a fraction in (0, 1)")),
    }
}

fn parse_planted(s: &str) -> Result<PlantedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (label, count) =
            part.rsplit_once(':').ok_or_else(|| format!("`{part}` is not `label:count`"))?;
        if label.is_empty() {
            return Err(format!("`{part}` has an empty label"));
        }
        out.push((label.to_string(), parse_count(count)?));
    }
    if out.is_empty() {
        return Err("no planted keys".into());
    }
    Ok(PlantedList(out))
}

impl StreamArgs {
    fn spec(&self, n: u64, theta: Option<f64>) -> anyhow::Result<StreamSpec> {
        let dist = match (self.dist, &self.planted) {
            (None | Some(Dist::Planted), Some(p)) => Distribution::Planted { counts: p.0.clone() },
            (Some(Dist::Planted), None) => bail!("--dist planted needs --planted"),
            (Some(_), Some(_)) => bail!("--planted only combines with --dist planted"),
            (Some(Dist::Uniform) | None, None) => Distribution::Uniform,
            (Some(Dist::Powerlaw), None) => {
                Distribution::PowerLaw { theta: theta.ok_or_else(|| anyhow!("--dist powerlaw needs --theta"))? }
            }
        };
        let universe = match (&dist, self.u) {
            (_, Some(u)) => u,
            (Distribution::Uniform, None) => n.max(1),
            _ => 0,
        };
        Ok(StreamSpec { n, universe, distribution: dist, order: self.order.into(), seed: self.seed })
    }
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let n = match (a.n, &a.stream.planted) {
        (Some(n), _) => n,
        (None, Some(p)) => p.0.iter().map(|x| x.1).sum(),
        (None, None) => bail!("--n is required"),
    };
    let keys = generate(&a.stream.spec(n, a.theta)?)?;
    match &a.output {
        Some(path) => write_stream(path, &keys)?,
        None => std::io::stdout().write_all(&encode_stream(&keys, false))?,
    }
    Ok(())
}

fn cmd_truth(a: &TruthArgs) -> anyhow::Result<()> {
    let stream = read_stream(&a.stream).with_context(|| format!("reading {}", a.stream.display()))?;
    let n = stream.len() as u64;
    let t = match (a.t, a.phi) {
        (Some(t), _) => t,
        (None, Some(phi)) => DetectorConfig { threshold: Threshold::Fraction(phi), ..DetectorConfig::online(n.max(1), 1, 1, 1) }.t(),
        (None, None) => unreachable!(),
    };
    if t == 0 {
        bail!("T must be positive");
    }
    let alpha = match (a.alpha, a.q) {
        (Some(al), _) => al,
        (None, Some(q)) if q >= 2 => 1.0 / (q as f64 - 1.0),
        (None, Some(q)) => bail!("q = {q} must be at least 2"),
        (None, None) => 0.0,
    };
    let csv = truth_to_csv(&oracle_events(&stream, t, alpha).events);
    emit(a.output.as_deref(), &csv)
}

fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gate(cfg: &DetectorConfig, force: bool) -> anyhow::Result<()> {
    cfg.validate()?;
    match cfg.check_preconditions() {
        Err(e) if force => {
            eprintln!("warning: {e}");
            Ok(())
        }
        r => Ok(r?),
    }
}

fn cmd_run(a: &RunArgs) -> anyhow::Result<bool> {
    // gate before touching the stream when N is given
    if let Some(n) = a.n {
        gate(&a.det.config(n), a.force)?;
    }
    let path = a.stream.as_ref().ok_or_else(|| anyhow!("no stream file given"))?;
    let stream = read_stream(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = a.det.config(a.n.unwrap_or(stream.len() as u64));
    gate(&cfg, a.force)?;
    let storage = match &a.storage_dir {
        Some(dir) => Storage::File(dir.clone()),
        None => Storage::Memory,
    };
    let mut manifest = execute(&cfg, &storage, path, &a.out)?;
    print!("{}", manifest.io.to_csv());
    let c = manifest.counters;
    println!(
        "events={} queries={} sweeps={} flushes={} merges={}",
        c.reports, c.queries, c.sweeps, c.flushes, c.merges
    );
    let mut ok = true;
    if a.verify {
        let alpha = if cfg.mode == Mode::TimeStretch { cfg.alpha() } else { 0.0 };
        let truth = oracle_events(&stream, cfg.t(), alpha);
        let events = events_from_csv(&std::fs::read_to_string(&manifest.events.path)?)?;
        let spec = VerifySpec {
            mode: cfg.mode,
            exact: cfg.is_exact(),
            n: cfg.n,
            forbidden_at_or_below: (!cfg.is_exact()).then(|| cfg.report_threshold() - 1),
        };
        let verdict = verify(&events, &truth.events, Some(&truth.counts), &spec);
        for line in verdict.lines() {
            println!("{line}");
        }
        println!("verdict: {}", if verdict.passed() { "PASS" } else { "FAIL" });
        ok = verdict.passed();
        manifest.verdicts = Some(if ok { vec!["PASS".into()] } else { verdict.lines() });
        manifest.save(&a.out.join("manifest.json"))?;
    }
    println!("manifest: {}", a.out.join("manifest.json").display());
    Ok(ok)
}

fn cmd_verify(a: &VerifyArgs) -> anyhow::Result<bool> {
    let events = events_from_csv(&std::fs::read_to_string(&a.events).with_context(|| format!("reading {}", a.events.display()))?)?;
    let truth = truth_from_csv(&std::fs::read_to_string(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?)?;
    let counts: Option<HashMap<u64, u64>> = match &a.stream {
        Some(p) => {
            let mut m = HashMap::new();
            for k in read_stream(p)? {
                *m.entry(k).or_insert(0) += 1;
            }
            Some(m)
        }
        None => None,
    };
    let n = a.n.or(counts.as_ref().map(|m| m.values().sum())).unwrap_or(u64::MAX);
    let spec = VerifySpec { mode: a.mode, exact: !a.approximate, n, forbidden_at_or_below: a.forbid_at_or_below };
    let verdict = verify(&events, &truth, counts.as_ref(), &spec);
    for line in verdict.lines() {
        println!("{line}");
    }
    println!(
        "checked {} events, {} reports: {}",
        verdict.events_checked,
        verdict.reports_checked,
        if verdict.passed() { "PASS" } else { "FAIL" }
    );
    Ok(verdict.passed())
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let base = a.det.config(a.n[0]);
    let grid = BenchGrid {
        m: if a.m_grid.is_empty() { vec![base.m] } else { a.m_grid.clone() },
        b: if a.b_grid.is_empty() { vec![base.b] } else { a.b_grid.clone() },
        r: if a.r_grid.is_empty() { vec![base.r] } else { a.r_grid.clone() },
        n: a.n.clone(),
        param: a.param.clone(),
        base,
    };
    let fixed;
    let stream = match &a.stream {
        Some(p) => {
            fixed = read_stream(p)?;
            BenchStream::Fixed(&fixed)
        }
        None => BenchStream::Generate(a.gen.spec(a.n[0], a.det.theta)?),
    };
    let rows = bench(&grid, &stream)?;
    emit(a.output.as_deref(), &rows_to_csv(&rows))
}

fn cmd_replay(path: &Path) -> anyhow::Result<bool> {
    let manifest = RunManifest::load(path).with_context(|| format!("reading {}", path.display()))?;
    let rep = replay(&manifest)?;
    let word = |b: bool| if b { "identical" } else { "DIFFERENT" };
    println!("events: {}", word(rep.events_match));
    println!("io: {}", word(rep.io_match));
    println!("thresholds: {}", word(rep.trace_match));
    Ok(rep.identical())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Generate(a) => cmd_generate(a).map(|_| true),
        Cmd::Truth(a) => cmd_truth(a).map(|_| true),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Bench(a) => cmd_bench(a).map(|_| true),
        Cmd::Replay { manifest } => cmd_replay(manifest),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
