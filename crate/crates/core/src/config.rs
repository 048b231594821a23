use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// Reporting threshold, given either as a count or as a stream fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Count(u64),
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    /// `1/N`: no count is ever lost below the last level.
    Exact,
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Online,
    TimeStretch,
    PowerLaw,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::TimeStretch => "time-stretch",
            Mode::PowerLaw => "power-law",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Mode::Online),
            "time-stretch" | "time_stretch" | "stretch" => Ok(Mode::TimeStretch),
            "power-law" | "power_law" | "powerlaw" => Ok(Mode::PowerLaw),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Time-stretch granularity: bins per level, or the stretch `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stretch {
    Bins(usize),
    Alpha(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub n: u64,
    pub threshold: Threshold,
    pub epsilon: Epsilon,
    pub m: usize,
    pub b: usize,
    pub r: f64,
    pub mode: Mode,
    pub stretch: Stretch,
    pub theta: Option<f64>,
    pub dynamic_thresholds: bool,
}

impl DetectorConfig {
    /// Exact online configuration with `r = 2`.
    pub fn online(n: u64, t: u64, m: usize, b: usize) -> Self {
        Self {
            n,
            threshold: Threshold::Count(t),
            epsilon: Epsilon::Exact,
            m,
            b,
            r: 2.0,
            mode: Mode::Online,
            stretch: Stretch::Bins(2),
            theta: None,
            dynamic_thresholds: false,
        }
    }

    pub fn time_stretch(n: u64, t: u64, m: usize, b: usize, q: usize) -> Self {
        Self { mode: Mode::TimeStretch, stretch: Stretch::Bins(q), ..Self::online(n, t, m, b) }
    }

    pub fn power_law(n: u64, t: u64, m: usize, b: usize, theta: f64) -> Self {
        Self { mode: Mode::PowerLaw, theta: Some(theta), ..Self::online(n, t, m, b) }
    }

    pub fn n_f(&self) -> f64 {
        self.n as f64
    }

    /// `phi * N`, exact when the threshold was given as a count.
    pub fn phi_n(&self) -> f64 {
        match self.threshold {
            Threshold::Count(t) => t as f64,
            Threshold::Fraction(phi) => phi * self.n_f(),
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi_n() / self.n_f()
    }

    /// `T = ceil(phi * N)`.
    pub fn t(&self) -> u64 {
        match self.threshold {
            Threshold::Count(t) => t,
            Threshold::Fraction(_) => ceil_tol(self.phi_n()) as u64,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.epsilon, Epsilon::Exact)
    }

    pub fn eps(&self) -> f64 {
        match self.epsilon {
            Epsilon::Exact => 1.0 / self.n_f(),
            Epsilon::Fraction(e) => e,
        }
    }

    pub fn eps_n(&self) -> f64 {
        match self.epsilon {
            Epsilon::Exact => 1.0,
            Epsilon::Fraction(e) => e * self.n_f(),
        }
    }

    /// Smallest consolidated count that triggers a report: `T` in exact
    /// mode, otherwise the least integer strictly above `(phi - eps) * N`.
    pub fn report_threshold(&self) -> u64 {
        if self.is_exact() {
            return self.t();
        }
        let x = self.phi_n() - self.eps_n();
        if x < 0.0 {
            return 1;
        }
        floor_tol(x) as u64 + 1
    }

    /// Level-0 count above which the online detector queries deeper levels:
    /// `(phi - 1/M) * N`.
    pub fn trigger_line(&self) -> f64 {
        self.phi_n() - self.n_f() / self.m as f64
    }

    /// Cascade depth `1 + ceil(log_r(1 / (eps * M)))`, at least 1.
    pub fn levels(&self) -> usize {
        1 + steps_to_reach(self.r, 1.0 / (self.eps() * self.m as f64))
    }

    /// `ceil(r^i * M)`.
    pub fn level_capacity(&self, i: usize) -> usize {
        ceil_tol(self.r.powi(i as i32) * self.m as f64) as usize
    }

    /// Bins per time-stretch level.
    pub fn bins(&self) -> usize {
        match self.stretch {
            Stretch::Bins(q) => q,
            Stretch::Alpha(a) => ceil_tol((a + 1.0) / a) as usize,
        }
    }

    /// The stretch actually guaranteed once `q` is rounded: `1 / (q - 1)`.
    pub fn alpha(&self) -> f64 {
        1.0 / (self.bins() as f64 - 1.0)
    }

    /// Power-law disk depth `ceil(log_r(2 / (eps * M)))`, at least 1.
    pub fn pl_levels(&self) -> usize {
        steps_to_reach(self.r, 2.0 / (self.eps() * self.m as f64)).max(1)
    }

    /// Capacity of power-law disk level `i` in `1..=L`: `2 / (r^(L-i) * eps)`.
    pub fn pl_capacity(&self, i: usize) -> usize {
        let l = self.pl_levels();
        let cap = 2.0 / (self.r.powi((l - i) as i32) * self.eps());
        (floor_tol(cap) as usize).max(1)
    }

    /// Static level thresholds `tau[1..=L]` (index 0 unused, set to 0).
    pub fn static_thresholds(&self) -> Vec<u64> {
        let theta = self.theta.unwrap_or(2.0);
        let l = self.pl_levels();
        let z = 1.0 / (theta - 1.0);
        let base = (self.r * self.eps() * self.n_f()).powf(z);
        let mut tau = vec![0u64; l + 1];
        for (i, t) in tau.iter_mut().enumerate().skip(1) {
            let v = base * self.r.powf((l - i) as f64 * z);
            *t = (floor_tol(v) as u64).max(1);
        }
        tau
    }

    /// Structural validity, independent of mode scalability.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("N must be positive".into());
        }
        if self.m == 0 || self.b == 0 {
            return bad("M and B must be positive".into());
        }
        if self.r.is_nan() || self.r <= 1.0 {
            return bad(format!("growth factor r = {} must exceed 1", self.r));
        }
        if let Threshold::Fraction(phi) = self.threshold {
            if !(phi > 0.0 && phi <= 1.0) {
                return bad(format!("phi = {phi} must lie in (0, 1]"));
            }
        }
        let t = self.t();
        if t == 0 || t > self.n {
            return bad(format!("T = {t} must lie in [1, N = {}]", self.n));
        }
        if let Epsilon::Fraction(e) = self.epsilon {
            if e * self.n_f() < 1.0 - TOL {
                return bad(format!("epsilon = {e} is below 1/N"));
            }
            if e >= self.phi() {
                return bad(format!("epsilon = {e} must be below phi = {}", self.phi()));
            }
        }
        match self.mode {
            Mode::Online => {}
            Mode::TimeStretch => {
                if self.r.fract() != 0.0 {
                    return bad(format!("time-stretch needs an integer r, got {}", self.r));
                }
                match self.stretch {
                    Stretch::Alpha(a) if !(a > 0.0 && a <= 1.0) => {
                        return bad(format!("alpha = {a} must lie in (0, 1]"));
                    }
                    Stretch::Bins(q) if q < 2 => {
                        return bad(format!("bin count q = {q} must be at least 2"));
                    }
                    _ => {}
                }
                if self.m / self.bins() == 0 {
                    return bad(format!("M = {} leaves an empty bin for q = {}", self.m, self.bins()));
                }
            }
            Mode::PowerLaw => match self.theta {
                Some(theta) if theta > 1.0 => {}
                Some(theta) => return bad(format!("theta = {theta} must exceed 1")),
                None => return bad("power-law mode needs theta".into()),
            },
        }
        Ok(())
    }

    /// Scalability preconditions of the selected mode. The detectors stay
    /// correct without them but lose their cost guarantees.
    pub fn check_preconditions(&self) -> Result<()> {
        self.validate()?;
        match self.mode {
            Mode::Online => {
                let slack = self.trigger_line();
                if slack < 1.0 - TOL {
                    return Err(Error::Precondition(format!(
                        "(phi - 1/M) * N >= 1 fails: phi*N = {}, N/M = {:.3}, difference {:.3}",
                        self.phi_n(),
                        self.n_f() / self.m as f64,
                        slack
                    )));
                }
            }
            Mode::TimeStretch => {}
            Mode::PowerLaw => {
                if !self.dynamic_thresholds {
                    let line = self.sweep_line(&self.static_thresholds());
                    if line < 1.0 - TOL {
                        let tau = self.static_thresholds();
                        return Err(Error::Precondition(format!(
                            "phi*N - max(2*tau_1, sum tau) >= 1 fails: phi*N = {}, tau_1 = {}, sum tau = {}",
                            self.phi_n(),
                            tau[1],
                            tau.iter().sum::<u64>()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// RAM count at which a power-law key is swept, for thresholds `tau`.
    pub fn sweep_line(&self, tau: &[u64]) -> f64 {
        let t1 = tau.get(1).copied().unwrap_or(0);
        let sum: u64 = tau.iter().sum();
        self.phi_n() - (2 * t1).max(sum) as f64
    }
}

/// Smallest `k >= 0` with `r^k >= x`, tolerant of float noise.
fn steps_to_reach(r: f64, x: f64) -> usize {
    let mut k = 0;
    let mut p = 1.0f64;
    while p * (1.0 + TOL) < x {
        p *= r;
        k += 1;
    }
    k
}

fn ceil_tol(x: f64) -> f64 {
    (x - TOL * x.abs().max(1.0)).ceil()
}

fn floor_tol(x: f64) -> f64 {
    (x + TOL * x.abs().max(1.0)).floor()
}
