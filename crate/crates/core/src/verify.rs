//! Checks detector output against exact ground truth.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::config::Mode;
use crate::report::EventReport;
use crate::workload::TruthEvent;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A true event with no report.
    FalseNegative { key: u64 },
    /// Exact mode: a report for a key that never reached `T`.
    FalsePositive { key: u64 },
    /// A report for a key whose final count is inside the forbidden band.
    Forbidden { key: u64, count: u64 },
    Late { key: u64, report_time: u64, due: u64 },
    /// A report emitted before the event it claims (exact online only).
    Early { key: u64, report_time: u64, trigger_time: u64 },
    Duplicate { key: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FalseNegative { key } => write!(f, "FALSE_NEGATIVE key={key}"),
            Violation::FalsePositive { key } => write!(f, "FALSE_POSITIVE key={key}"),
            Violation::Forbidden { key, count } => write!(f, "FORBIDDEN key={key} count={count}"),
            Violation::Late { key, report_time, due } => {
                write!(f, "LATE key={key} report_time={report_time} due={due}")
            }
            Violation::Early { key, report_time, trigger_time } => {
                write!(f, "EARLY key={key} report_time={report_time} trigger_time={trigger_time}")
            }
            Violation::Duplicate { key } => write!(f, "DUPLICATE key={key}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifySpec {
    pub mode: Mode,
    pub exact: bool,
    /// Stream length; caps stretch deadlines.
    pub n: u64,
    /// Reports for keys with final count at or below this are forbidden.
    /// Needs `counts`.
    pub forbidden_at_or_below: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub events_checked: usize,
    pub reports_checked: usize,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn lines(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

/// Compares `reports` with `truth`. `counts` are final stream counts and
/// are only consulted for the forbidden-band check.
pub fn verify(
    reports: &[EventReport],
    truth: &[TruthEvent],
    counts: Option<&HashMap<u64, u64>>,
    spec: &VerifySpec,
) -> Verdict {
    let mut violations = Vec::new();
    let mut first: HashMap<u64, &EventReport> = HashMap::new();
    for r in reports {
        if first.insert(r.key, r).is_some() {
            violations.push(Violation::Duplicate { key: r.key });
        }
        // keep the earliest report for timeliness
        first.entry(r.key).and_modify(|e| {
            if r.report_time < e.report_time {
                *e = r;
            }
        });
    }
    let by_key: HashMap<u64, &TruthEvent> = truth.iter().map(|e| (e.key, e)).collect();
    for ev in truth {
        let Some(r) = first.get(&ev.key) else {
            violations.push(Violation::FalseNegative { key: ev.key });
            continue;
        };
        match spec.mode {
            Mode::Online | Mode::PowerLaw => {
                if r.report_time > ev.trigger_time {
                    violations.push(Violation::Late {
                        key: ev.key,
                        report_time: r.report_time,
                        due: ev.trigger_time,
                    });
                } else if spec.exact && r.report_time < ev.trigger_time {
                    violations.push(Violation::Early {
                        key: ev.key,
                        report_time: r.report_time,
                        trigger_time: ev.trigger_time,
                    });
                }
            }
            Mode::TimeStretch => {
                let due = ev.deadline.min(spec.n);
                if r.report_time > due {
                    violations.push(Violation::Late { key: ev.key, report_time: r.report_time, due });
                }
            }
        }
    }
    let mut seen = HashSet::new();
    for r in reports {
        if !seen.insert(r.key) {
            continue;
        }
        if spec.exact && !by_key.contains_key(&r.key) {
            violations.push(Violation::FalsePositive { key: r.key });
        }
        if let (Some(limit), Some(counts)) = (spec.forbidden_at_or_below, counts) {
            let c = counts.get(&r.key).copied().unwrap_or(0);
            if c <= limit {
                violations.push(Violation::Forbidden { key: r.key, count: c });
            }
        }
    }
    Verdict { events_checked: truth.len(), reports_checked: reports.len(), violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::oracle_events;

    fn spec(mode: Mode) -> VerifySpec {
        VerifySpec { mode, exact: true, n: 10, forbidden_at_or_below: None }
    }

    #[test]
    fn clean_run_passes() {
        let gt = oracle_events(&[1, 2, 1, 1], 3, 1.0);
        let v = verify(&[EventReport::on_time(1, 4, 3)], &gt.events, None, &spec(Mode::Online));
        assert!(v.passed(), "{:?}", v.violations);
    }

    #[test]
    fn each_violation_kind() {
        let gt = oracle_events(&[1, 2, 1, 1, 2, 2], 3, 1.0);
        let r = [EventReport::on_time(1, 4, 3), EventReport::on_time(1, 4, 3)];
        let v = verify(&r, &gt.events, None, &spec(Mode::Online));
        assert_eq!(v.lines(), vec!["DUPLICATE key=1", "FALSE_NEGATIVE key=2"]);

        let r = [EventReport::on_time(1, 5, 3), EventReport::on_time(2, 6, 3), EventReport::on_time(9, 6, 3)];
        let v = verify(&r, &gt.events, None, &spec(Mode::Online));
        assert_eq!(v.lines(), vec!["LATE key=1 report_time=5 due=4", "FALSE_POSITIVE key=9"]);

        let counts = HashMap::from([(1, 3), (2, 3), (9, 2)]);
        let approx = VerifySpec { exact: false, forbidden_at_or_below: Some(2), ..spec(Mode::Online) };
        let r = [EventReport::on_time(1, 3, 3), EventReport::on_time(2, 6, 3), EventReport::on_time(9, 6, 3)];
        let v = verify(&r, &gt.events, Some(&counts), &approx);
        assert_eq!(v.lines(), vec!["FORBIDDEN key=9 count=2"]);
    }

    #[test]
    fn stretch_deadline_is_capped_at_n() {
        // key 1: first seen 1, event at 4, flow 3, alpha 1: deadline 7
        let gt = oracle_events(&[1, 2, 1, 1], 3, 1.0);
        let ok = verify(&[EventReport::deferred(1, 7, 3)], &gt.events, None, &VerifySpec { n: 10, ..spec(Mode::TimeStretch) });
        assert!(ok.passed());
        let late = verify(&[EventReport::deferred(1, 7, 3)], &gt.events, None, &VerifySpec { n: 6, ..spec(Mode::TimeStretch) });
        assert_eq!(late.lines(), vec!["LATE key=1 report_time=7 due=6"]);
    }
}
