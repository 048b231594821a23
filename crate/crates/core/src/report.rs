use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One reported event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventReport {
    pub key: u64,
    /// Index of the key's `T`-th occurrence, when the detector knows it.
    pub trigger_time: Option<u64>,
    /// Stream index at which the report was emitted.
    pub report_time: u64,
    /// Consolidated count at emission.
    pub count: u64,
}

impl EventReport {
    /// A report emitted at the arrival that caused it.
    pub fn on_time(key: u64, time: u64, count: u64) -> Self {
        Self { key, trigger_time: Some(time), report_time: time, count }
    }

    /// A report emitted at `report_time` with no trigger-time knowledge.
    pub fn deferred(key: u64, report_time: u64, count: u64) -> Self {
        Self { key, trigger_time: None, report_time, count }
    }
}

pub const EVENTS_HEADER: &str = "key,trigger_time,report_time,count";

/// Events as CSV, in the order given. An unknown trigger time is left empty.
pub fn events_to_csv(events: &[EventReport]) -> String {
    let mut out = String::with_capacity(32 * (events.len() + 1));
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let trig = e.trigger_time.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", e.key, trig, e.report_time, e.count);
    }
    out
}

pub fn events_from_csv(text: &str) -> Result<Vec<EventReport>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EVENTS_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "events file must start with `{EVENTS_HEADER}`, found {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 fields", i + 1)));
        }
        let num = |s: &str| {
            s.parse::<u64>().map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", i + 1)))
        };
        out.push(EventReport {
            key: num(f[0])?,
            trigger_time: if f[1].is_empty() { None } else { Some(num(f[1])?) },
            report_time: num(f[2])?,
            count: num(f[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_unknown_trigger() {
        let ev = vec![EventReport::on_time(7, 40, 24), EventReport::deferred(3, 90, 25)];
        let csv = events_to_csv(&ev);
        assert_eq!(csv, "key,trigger_time,report_time,count\n7,40,40,24\n3,,90,25\n");
        assert_eq!(events_from_csv(&csv).unwrap(), ev);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(events_from_csv("nope\n").is_err());
        assert!(events_from_csv("key,trigger_time,report_time,count\n1,2,3\n").is_err());
        assert!(events_from_csv("key,trigger_time,report_time,count\n1,x,3,4\n").is_err());
    }
}
