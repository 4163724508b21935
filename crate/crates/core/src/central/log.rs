//! Merged, incident-grouped log of local and central reports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::analytics::{AnomalyReport, EventEnd};
use crate::model::BusId;
use crate::Result;

/// Who produced a log entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Sensor(BusId),
    Central,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Sensor(b) => write!(f, "sensor {b}"),
            Origin::Central => f.write_str("central"),
        }
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Origin::Sensor(b) => s.serialize_u32(b.0),
            Origin::Central => s.serialize_str("central"),
        }
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bus(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bus(b) => Ok(Origin::Sensor(BusId(b))),
            Raw::Name(n) if n == "central" => Ok(Origin::Central),
            Raw::Name(n) => Err(de::Error::custom(format!("unknown origin {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub incident: u32,
    pub origin: Origin,
    #[serde(flatten)]
    pub report: AnomalyReport,
}

/// Time-ordered entries; overlapping ones share an incident id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn incident_count(&self) -> usize {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.incident).collect();
        ids.dedup();
        ids.len()
    }

    pub fn central(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.origin == Origin::Central)
    }

    pub fn local(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.origin != Origin::Central)
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| crate::Error::io("<event log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(EventLog { entries })
    }
}

type Key = (Origin, crate::analytics::Rule, Option<crate::model::LineId>, u64);

/// Merge local and central reports into one log.
///
/// A persistent report is dropped when the same origin, rule, line and
/// start also has a closing report. Entries are ordered by start, then end
/// (persistent last), origin, rule and line. Incidents are maximal runs of
/// entries whose `[start, end]` intervals chain together by overlap; an
/// open (persistent) interval extends to infinity.
pub fn fuse_reports(local: &[(BusId, AnomalyReport)], central: &[AnomalyReport]) -> EventLog {
    let tagged = local
        .iter()
        .map(|(b, r)| (Origin::Sensor(*b), r))
        .chain(central.iter().map(|r| (Origin::Central, r)));
    let mut by_key: BTreeMap<Key, Vec<(Origin, &AnomalyReport)>> = BTreeMap::new();
    for (o, r) in tagged {
        by_key.entry((o, r.rule, r.line, r.start_k)).or_default().push((o, r));
    }
    let mut kept: Vec<(Origin, AnomalyReport)> = Vec::new();
    for group in by_key.into_values() {
        let closed: Vec<_> = group.iter().filter(|(_, r)| !r.is_persistent()).collect();
        if closed.is_empty() {
            kept.push((group[0].0, group[0].1.clone()));
        } else {
            let mut seen: Vec<&AnomalyReport> = Vec::new();
            for (o, r) in closed {
                if !seen.contains(r) {
                    seen.push(r);
                    kept.push((*o, (*r).clone()));
                }
            }
        }
    }
    kept.sort_by(|(oa, a), (ob, b)| {
        let ea = a.end_k.sample().unwrap_or(u64::MAX);
        let eb = b.end_k.sample().unwrap_or(u64::MAX);
        (a.start_k, ea, oa, a.rule, a.line, a.label)
            .cmp(&(b.start_k, eb, ob, b.rule, b.line, b.label))
            .then(a.severity.total_cmp(&b.severity))
    });
    let mut entries = Vec::with_capacity(kept.len());
    let mut incident = 0;
    let mut reach: Option<u64> = None;
    for (origin, report) in kept {
        let end = match report.end_k {
            EventEnd::At(e) => e,
            EventEnd::Persistent => u64::MAX,
        };
        match reach {
            Some(r) if report.start_k <= r => reach = Some(r.max(end)),
            _ => {
                incident += 1;
                reach = Some(end);
            }
        }
        entries.push(LogEntry {
            incident,
            origin,
            report,
        });
    }
    EventLog { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{Label, Rule};
    use crate::time::default_epoch;

    fn rep(bus: u32, start: u64, end: EventEnd) -> (BusId, AnomalyReport) {
        (
            BusId(bus),
            AnomalyReport::new(Rule::VoltageMag, Label::Sag, Some(BusId(bus)), None, start, end, 0.5, default_epoch()),
        )
    }

    #[test]
    fn overlapping_sags_share_an_incident() {
        let log = fuse_reports(&[rep(7, 100, EventEnd::At(200)), rep(19, 150, EventEnd::At(260))], &[]);
        assert_eq!(log.entries.len(), 2);
        assert_eq!(log.incident_count(), 1);
    }

    #[test]
    fn disjoint_events_are_separate() {
        let log = fuse_reports(&[rep(7, 100, EventEnd::At(200)), rep(19, 300, EventEnd::At(310))], &[]);
        assert_eq!(log.incident_count(), 2);
        assert_eq!(log.entries[1].incident, 2);
    }

    #[test]
    fn persistent_superseded_by_close() {
        let log = fuse_reports(&[rep(7, 100, EventEnd::Persistent), rep(7, 100, EventEnd::At(900))], &[]);
        assert_eq!(log.entries.len(), 1);
        assert_eq!(log.entries[0].report.end_k, EventEnd::At(900));
    }

    #[test]
    fn jsonl_round_trip_and_order() {
        let central = AnomalyReport::new(Rule::Central, Label::Surge, None, None, 120, EventEnd::At(121), 3.0, default_epoch());
        let log = fuse_reports(&[rep(7, 100, EventEnd::At(200))], &[central]);
        assert_eq!(log.entries[1].origin, Origin::Central);
        let text = log.to_jsonl();
        assert!(text.lines().nth(1).unwrap().contains(r#""origin":"central""#));
        let back = EventLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, log);
    }
}
