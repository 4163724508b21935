//! Local engine: per-sensor quantities, rules, change detection and event
//! segmentation. Nothing here knows the feeder model.

mod cusum;
mod engine;
mod frequency;
mod power;
mod qss;
mod segment;
mod trend;
mod voltage;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

pub use cusum::{cusum_step, CusumConfig, Decision, DetectorState, Direction};
pub use engine::{ChannelFloors, DerivedSample, LineDerived, LocalConfig, LocalEngine};
pub use frequency::{beta_to_hz, estimate_frequency_drift, hz_to_beta, FrequencyEstimator};
pub use power::{check_overcurrent, complex_power};
pub use qss::{qss_correlations, qss_residual, singular_values, Correlation, WindowBuffer};
pub use segment::{segment_events, SegmentConfig, SegmentEvent, Segmenter};
pub use trend::{classify_trend, ls_fit, TrendConfig};
pub use voltage::{classify_voltage, duration_s, VoltageClass, VoltageThresholds};

use crate::model::{BusId, LineId};
use crate::phasor::Phasor3;
use crate::time::iso_time;

/// One timestamp of one sensor: bus voltage and the current into every
/// incident line, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorFrame {
    pub k: u64,
    pub bus: BusId,
    pub v: Phasor3,
    pub i_lines: BTreeMap<LineId, Phasor3>,
}

impl PhasorFrame {
    pub fn is_finite(&self) -> bool {
        crate::phasor::is_finite(&self.v) && self.i_lines.values().all(crate::phasor::is_finite)
    }

    /// Net current injected into the network at the bus.
    pub fn net_injection(&self) -> Phasor3 {
        self.i_lines.values().fold(crate::phasor::ZERO3, |acc, i| crate::phasor::add(&acc, i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    VoltageMag,
    Overcurrent,
    ActivePower,
    ReactivePower,
    CurrentMag,
    Frequency,
    QssValidity,
    /// Change in the central subspace metric.
    Central,
}

impl Rule {
    pub fn allows(&self, label: Label) -> bool {
        use Label::*;
        match self {
            Rule::VoltageMag => matches!(
                label,
                Sag | Swell | Interruption | SustainedInterruption | Undervoltage | Overvoltage
            ),
            Rule::Overcurrent => label == Overcurrent,
            Rule::ActivePower | Rule::ReactivePower | Rule::CurrentMag | Rule::Frequency | Rule::Central => {
                matches!(label, Surge | Drop | Oscillation)
            }
            Rule::QssValidity => label == Transient,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Sag,
    Swell,
    Interruption,
    SustainedInterruption,
    Undervoltage,
    Overvoltage,
    Surge,
    Drop,
    Oscillation,
    Overcurrent,
    Transient,
}

/// End of a report: a sample index, or `Persistent` while still ongoing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventEnd {
    At(u64),
    Persistent,
}

impl EventEnd {
    pub fn sample(&self) -> Option<u64> {
        match self {
            EventEnd::At(k) => Some(*k),
            EventEnd::Persistent => None,
        }
    }
}

impl Serialize for EventEnd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EventEnd::At(k) => s.serialize_u64(*k),
            EventEnd::Persistent => s.serialize_str("Persistent"),
        }
    }
}

impl<'de> Deserialize<'de> for EventEnd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            K(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::K(k) => Ok(EventEnd::At(k)),
            Raw::S(s) if s == "Persistent" => Ok(EventEnd::Persistent),
            Raw::S(s) => Err(de::Error::custom(format!("expected sample index or \"Persistent\", got {s:?}"))),
        }
    }
}

/// A labelled event segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyReport {
    pub rule: Rule,
    pub label: Label,
    /// Reporting sensor bus; absent for central records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<BusId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineId>,
    pub start_k: u64,
    pub end_k: EventEnd,
    pub start_time: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<String>,
    pub severity: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_range: bool,
}

impl AnomalyReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rule: Rule,
        label: Label,
        bus: Option<BusId>,
        line: Option<LineId>,
        start_k: u64,
        end_k: EventEnd,
        severity: f64,
        epoch: DateTime<Utc>,
    ) -> Self {
        debug_assert!(rule.allows(label), "{rule} cannot carry {label:?}");
        AnomalyReport {
            rule,
            label,
            bus,
            line,
            start_k,
            end_k,
            start_time: iso_time(epoch, start_k),
            end_time: end_k.sample().map(|k| iso_time(epoch, k)),
            severity,
            out_of_range: false,
        }
    }

    pub fn is_persistent(&self) -> bool {
        self.end_k == EventEnd::Persistent
    }

    /// Last sample covered; `at` stands in for a persistent end.
    pub fn end_or(&self, at: u64) -> u64 {
        self.end_k.sample().unwrap_or(at)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }
}
