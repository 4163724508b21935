//! Incident summary of an event log against the injected ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use phasorguard::central::{LogEntry, Origin};
use phasorguard::synth::{EventKind, GroundTruth, TruthEvent};
use phasorguard::{EventLog, Rule};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventOutcome {
    pub kind: EventKind,
    pub start_k: u64,
    pub end_k: u64,
    pub hit: bool,
    /// Samples from injection to the earliest matching entry that starts
    /// inside the widened window; negative within the leading tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<i64>,
    pub origins: Vec<String>,
    pub expected_rules: Vec<Rule>,
    pub rules_fired: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub tolerance: u64,
    pub incidents: usize,
    pub hits: usize,
    pub misses: usize,
    /// Incidents none of whose entries fall near an injected event.
    pub false_alarms: usize,
    pub events: Vec<EventOutcome>,
}

fn window(ev: &TruthEvent, tol: u64) -> (u64, u64) {
    (ev.start_k.saturating_sub(tol), ev.end_k.saturating_add(tol))
}

fn overlaps(e: &LogEntry, (lo, hi): (u64, u64)) -> bool {
    e.report.start_k <= hi && e.report.end_or(u64::MAX) >= lo
}

/// An entry matches an event when its span overlaps the event widened by
/// `tolerance` samples on both sides.
pub fn score(log: &EventLog, truth: &GroundTruth, tolerance: u64) -> Summary {
    let mut events = Vec::new();
    for ev in &truth.events {
        let w = window(ev, tolerance);
        let matched: Vec<&LogEntry> = log.entries.iter().filter(|e| overlaps(e, w)).collect();
        let origins: BTreeSet<Origin> = matched.iter().map(|e| e.origin).collect();
        let rules: BTreeSet<Rule> = matched.iter().map(|e| e.report.rule).collect();
        events.push(EventOutcome {
            kind: ev.kind,
            start_k: ev.start_k,
            end_k: ev.end_k,
            hit: !matched.is_empty(),
            latency: matched
                .iter()
                .filter(|e| e.report.start_k >= w.0)
                .map(|e| e.report.start_k as i64 - ev.start_k as i64)
                .min(),
            origins: origins.iter().map(|o| o.to_string()).collect(),
            expected_rules: ev.expected_rules.clone(),
            rules_fired: rules.into_iter().collect(),
        });
    }
    let windows: Vec<(u64, u64)> = truth.events.iter().map(|e| window(e, tolerance)).collect();
    let incidents: BTreeSet<u32> = log.entries.iter().map(|e| e.incident).collect();
    let false_alarms = incidents
        .iter()
        .filter(|&&i| {
            !log.entries
                .iter()
                .filter(|e| e.incident == i)
                .any(|e| windows.iter().any(|&w| overlaps(e, w)))
        })
        .count();
    let hits = events.iter().filter(|e| e.hit).count();
    Summary {
        scenario: truth.scenario.clone(),
        tolerance,
        incidents: incidents.len(),
        hits,
        misses: events.len() - hits,
        false_alarms,
        events,
    }
}

fn kind_name(k: EventKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{k:?}"))
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    if xs.is_empty() {
        "-".into()
    } else {
        xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    }
}

pub fn table(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {}: {} incidents, {} hits, {} misses, {} false alarms (tolerance {} samples)",
        s.scenario, s.incidents, s.hits, s.misses, s.false_alarms, s.tolerance
    );
    let _ = writeln!(
        out,
        "{:<14} {:>7} {:>7} {:<4} {:>8}  {:<24} rules",
        "event", "start", "end", "hit", "latency", "origins"
    );
    for e in &s.events {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:<4} {:>8}  {:<24} {}",
            kind_name(e.kind),
            e.start_k,
            e.end_k,
            if e.hit { "yes" } else { "no" },
            e.latency.map_or("-".into(), |l| l.to_string()),
            if e.origins.is_empty() { "-".into() } else { e.origins.join(",") },
            join(&e.rules_fired),
        );
    }
    out
}
