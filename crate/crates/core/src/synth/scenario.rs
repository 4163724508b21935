//! Scenario file schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{BusId, FeederModel, LineId, PhaseMask};
use crate::phasor::Complex64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Source voltage dip; `magnitude` is the retained fraction.
    VoltageSag,
    /// Shunt of `magnitude` p.u. from the given phases to ground at `bus`.
    SlgFault,
    /// Series path of the given phases of `line` removed.
    FuseOpen,
    /// Fraction `magnitude` of the load at `bus` disconnected.
    LoadLoss,
    /// Load at `bus` scaled by `1 + magnitude`, ramped over `ramp_k`.
    LoadStep,
    /// Uplink of sensor `bus` replays its last pre-attack window.
    ReplayAttack,
}

/// A line given by its end buses, in either order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRef(pub BusId, pub BusId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<BusId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<String>,
    pub start_k: u64,
    pub end_k: u64,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub ramp_k: u64,
}

impl Event {
    pub fn phase_mask(&self) -> Option<PhaseMask> {
        self.phases.as_deref().and_then(PhaseMask::parse)
    }

    pub fn is_active(&self, k: u64) -> bool {
        self.start_k <= k && k < self.end_k
    }
}

/// Constant frequency drift from `start_k` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSegment {
    pub start_k: u64,
    pub drift_hz: f64,
}

/// Per-phase constant-power load, p.u. of a single phase's share of the
/// power base (so a balanced 1 p.u. load draws the full base).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: BusId,
    /// `[[p_a, q_a], [p_b, q_b], [p_c, q_c]]`.
    pub s: [[f64; 2]; 3],
}

impl Load {
    pub fn phase_power(&self) -> [Complex64; 3] {
        self.s.map(|[p, q]| Complex64::new(p, q))
    }
}

fn default_source() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1e-4
}

fn default_const_z() -> f64 {
    0.7
}

fn default_window() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Bundled feeder name (`ieee34`, `ieee123`) or a path.
    pub feeder: String,
    pub duration_s: f64,
    pub seed: u64,
    pub sensors: Vec<BusId>,
    #[serde(default = "default_source")]
    pub source_voltage_pu: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub drift: Vec<DriftSegment>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default = "default_const_z")]
    pub constant_z_below: f64,
    /// Length of the window a replay attack repeats, samples.
    #[serde(default = "default_window")]
    pub replay_window: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<String>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn samples(&self) -> u64 {
        (self.duration_s * crate::SAMPLE_RATE_HZ).round() as u64
    }

    /// Phase advance per sample at `k`.
    pub fn beta_at(&self, k: u64) -> f64 {
        self.drift
            .iter()
            .rfind(|d| d.start_k <= k)
            .map(|d| crate::analytics::hz_to_beta(d.drift_hz))
            .unwrap_or(0.0)
    }

    pub fn replay_attacks(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::ReplayAttack)
    }

    /// Resolve a line reference against a feeder.
    pub fn resolve_line(feeder: &FeederModel, r: LineRef) -> Option<LineId> {
        feeder
            .lines
            .iter()
            .find(|l| (l.from_bus == r.0 && l.to_bus == r.1) || (l.from_bus == r.1 && l.to_bus == r.0))
            .map(|l| l.id)
    }

    pub fn validate(&self, feeder: &FeederModel) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.source_voltage_pu > 0.0) {
            return bad("noise must be non-negative and source voltage positive".into());
        }
        if self.sensors.is_empty() {
            return bad("at least one sensor is required".into());
        }
        for b in self.sensors.iter().chain(self.loads.iter().map(|l| &l.bus)) {
            if feeder.bus(*b).is_none() {
                return bad(format!("bus {b} is not in feeder {}", feeder.name));
            }
        }
        let mut sorted = self.sensors.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.sensors.len() {
            return bad("sensor listed twice".into());
        }
        if self.drift.windows(2).any(|w| w[0].start_k >= w[1].start_k) {
            return bad("drift segments must be in increasing start order".into());
        }
        if self.events.windows(2).any(|w| w[0].start_k > w[1].start_k) {
            return bad("events must be ordered by start".into());
        }
        for (n, e) in self.events.iter().enumerate() {
            if e.start_k >= e.end_k {
                return bad(format!("event {n} must start before it ends"));
            }
            if let Some(b) = e.bus {
                if feeder.bus(b).is_none() {
                    return bad(format!("event {n} targets unknown bus {b}"));
                }
            }
            if let Some(l) = e.line {
                if Self::resolve_line(feeder, l).is_none() {
                    return bad(format!("event {n} targets unknown line {}-{}", l.0, l.1));
                }
            }
            if e.phases.is_some() && e.phase_mask().is_none() {
                return bad(format!("event {n} has a bad phase string"));
            }
            let ok = match e.kind {
                EventKind::VoltageSag => e.magnitude >= 0.0,
                EventKind::SlgFault => e.bus.is_some() && e.phase_mask().is_some() && e.magnitude > 0.0,
                EventKind::FuseOpen => e.line.is_some() && e.phase_mask().is_some(),
                EventKind::LoadLoss => e.bus.is_some() && (0.0..=1.0).contains(&e.magnitude),
                EventKind::LoadStep => e.bus.is_some() && e.magnitude > -1.0,
                EventKind::ReplayAttack => {
                    e.bus.is_some_and(|b| self.sensors.contains(&b)) && e.start_k >= 2
                }
            };
            if !ok {
                return bad(format!("event {n} ({:?}) is missing its target or has a bad magnitude", e.kind));
            }
        }
        Ok(())
    }
}
