//! Voltage magnitude classes by depth and duration.

use serde::{Deserialize, Serialize};

use super::Label;
use crate::{NOMINAL_HZ, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoltageThresholds {
    /// Magnitudes at or below this are low (sag range starts here).
    pub sag: f64,
    /// Magnitudes at or above this are high.
    pub swell: f64,
    /// Magnitudes strictly below this are an interruption.
    pub interruption: f64,
    /// Upper end of the swell range; above it the report is flagged.
    pub swell_max: f64,
    /// Longest duration of a short-duration event, seconds.
    pub long_duration_s: f64,
}

impl Default for VoltageThresholds {
    fn default() -> Self {
        VoltageThresholds {
            sag: 0.9,
            swell: 1.1,
            interruption: 0.1,
            swell_max: 1.8,
            long_duration_s: 60.0,
        }
    }
}

impl VoltageThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = 0.0 <= self.interruption
            && self.interruption < self.sag
            && self.sag < self.swell
            && self.swell < self.swell_max;
        if !ordered {
            return Err("voltage thresholds must satisfy 0 <= interruption < sag < swell < swell_max".into());
        }
        if self.long_duration_s.is_nan() || self.long_duration_s <= 0.0 {
            return Err("long_duration_s must be positive".into());
        }
        Ok(())
    }

    /// Whether a magnitude lies outside the normal band.
    pub fn violates(&self, mag: f64) -> bool {
        mag <= self.sag || mag >= self.swell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageClass {
    pub label: Label,
    /// Event duration, seconds.
    pub tau: f64,
    /// Deepest (or highest) magnitude seen.
    pub extreme: f64,
    pub out_of_range: bool,
}

/// Duration in seconds of an event covering samples `start..=end`.
pub fn duration_s(start: u64, end: u64) -> f64 {
    (end - start + 1) as f64 / SAMPLE_RATE_HZ
}

/// Classify the magnitude series of one event.
///
/// Returns `None` when no sample leaves the normal band or when the event
/// is shorter than half a nominal cycle.
pub fn classify_voltage(vmag: &[f64], th: &VoltageThresholds) -> Option<VoltageClass> {
    let tau = vmag.len() as f64 / SAMPLE_RATE_HZ;
    if tau < 0.5 / NOMINAL_HZ {
        return None;
    }
    let lo = vmag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vmag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let long = tau > th.long_duration_s;
    let (label, extreme) = if lo < th.interruption {
        (if long { Label::SustainedInterruption } else { Label::Interruption }, lo)
    } else if lo <= th.sag {
        (if long { Label::Undervoltage } else { Label::Sag }, lo)
    } else if hi >= th.swell {
        (if long { Label::Overvoltage } else { Label::Swell }, hi)
    } else {
        return None;
    };
    Some(VoltageClass {
        label,
        tau,
        extreme,
        out_of_range: hi > th.swell_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(mag: f64, samples: usize) -> Option<Label> {
        classify_voltage(&vec![mag; samples], &VoltageThresholds::default()).map(|c| c.label)
    }

    #[test]
    fn half_volt_for_a_second_is_sag() {
        assert_eq!(class(0.5, 120), Some(Label::Sag));
    }

    #[test]
    fn long_outage_is_sustained_interruption() {
        assert_eq!(class(0.05, 120 * 120), Some(Label::SustainedInterruption));
    }

    #[test]
    fn nominal_is_normal() {
        assert_eq!(class(1.0, 100_000), None);
        assert_eq!(class(0.95, 10), None);
    }

    #[test]
    fn above_range_is_flagged() {
        let c = classify_voltage(&[2.0; 30], &VoltageThresholds::default()).unwrap();
        assert_eq!(c.label, Label::Swell);
        assert!(c.out_of_range);
    }

    #[test]
    fn duration_counts_both_ends() {
        assert_eq!(duration_s(0, 119), 1.0);
    }
}
