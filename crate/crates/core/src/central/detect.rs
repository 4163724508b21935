//! Change detection on the central metric series.

use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{
    classify_trend, AnomalyReport, CusumConfig, DetectorState, EventEnd, Rule, SegmentConfig, SegmentEvent,
    Segmenter, TrendConfig,
};
use crate::time::default_epoch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CentralConfig {
    pub cusum: CusumConfig,
    pub segment: SegmentConfig,
    pub trend: TrendConfig,
    /// Divide the metric by the placement objective before detection.
    pub normalize: bool,
}

impl Default for CentralConfig {
    fn default() -> Self {
        CentralConfig {
            cusum: CusumConfig::default().with_floor(1e-6, 0.05),
            segment: SegmentConfig::default(),
            trend: TrendConfig::default(),
            normalize: true,
        }
    }
}

/// CUSUM plus segmentation over `x[k]`, producing central change records.
#[derive(Debug, Clone)]
pub struct CentralDetector {
    cfg: CentralConfig,
    scale: f64,
    det: DetectorState,
    seg: Segmenter,
    history: VecDeque<f64>,
    capture: Option<(Vec<f64>, Vec<f64>)>,
    epoch: DateTime<Utc>,
    skipped: u64,
}

impl CentralDetector {
    /// `baseline` is the placement objective used for normalisation.
    pub fn new(cfg: CentralConfig, baseline: f64) -> Self {
        let scale = if cfg.normalize && baseline > 0.0 { 1.0 / baseline } else { 1.0 };
        CentralDetector {
            det: DetectorState::new(cfg.cusum),
            seg: Segmenter::new(cfg.segment),
            history: VecDeque::new(),
            capture: None,
            epoch: default_epoch(),
            skipped: 0,
            scale,
            cfg,
        }
    }

    pub fn with_epoch(mut self, epoch: DateTime<Utc>) -> Self {
        self.epoch = epoch;
        self
    }

    /// Samples with no metric (zero or non-finite measurement vector).
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, k: u64, x: Option<f64>) -> Option<AnomalyReport> {
        let Some(x) = x.filter(|x| x.is_finite()) else {
            self.skipped += 1;
            return None;
        };
        let x = x * self.scale;
        let violation = self.det.step(k, x).is_change();
        if violation && !self.seg.is_open() {
            self.capture = Some((self.history.iter().copied().collect(), Vec::new()));
        }
        if let Some((_, post)) = &mut self.capture {
            if post.len() < self.cfg.trend.post {
                post.push(x);
            }
        }
        if self.history.len() == self.cfg.trend.pre {
            self.history.pop_front();
        }
        self.history.push_back(x);
        let ev = self.seg.step(k, violation)?;
        self.report(ev)
    }

    fn report(&mut self, ev: SegmentEvent) -> Option<AnomalyReport> {
        let (start, end) = match ev {
            SegmentEvent::Persistent { start, .. } => (start, EventEnd::Persistent),
            SegmentEvent::Closed { start, end, .. } => (start, EventEnd::At(end)),
        };
        let (pre, post) = match ev {
            SegmentEvent::Closed { .. } => self.capture.take()?,
            SegmentEvent::Persistent { .. } => self.capture.clone()?,
        };
        let pre = if pre.len() >= 2 { pre } else { post[..1].to_vec() };
        let noise = self.cfg.cusum.var_floor.sqrt();
        let label = classify_trend(&pre, &post, noise, &self.cfg.trend);
        let peak = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(AnomalyReport::new(Rule::Central, label, None, None, start, end, peak, self.epoch))
    }

    pub fn flush(&mut self) -> Option<AnomalyReport> {
        let ev = self.seg.flush()?;
        self.report(ev)
    }
}

/// Run a whole `x[k]` series through a fresh detector.
pub fn central_change_stream(
    series: impl IntoIterator<Item = (u64, Option<f64>)>,
    cfg: CentralConfig,
    baseline: f64,
    epoch: DateTime<Utc>,
) -> Vec<AnomalyReport> {
    let mut d = CentralDetector::new(cfg, baseline).with_epoch(epoch);
    let mut out: Vec<AnomalyReport> = series.into_iter().filter_map(|(k, x)| d.step(k, x)).collect();
    out.extend(d.flush());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_series_has_no_changes() {
        let series = (0..3000).map(|k| (k, Some(1e-3 * (1.0 + 1e-4 * ((k % 7) as f64)))));
        assert!(central_change_stream(series, CentralConfig::default(), 1.0, default_epoch()).is_empty());
    }

    #[test]
    fn two_level_changes_give_two_records() {
        let series = (0..2000).map(|k| {
            let x = match k {
                0..=499 => 1e-3,
                500..=799 => 5e-2,
                _ => 3e-3,
            };
            (k, Some(x))
        });
        let recs = central_change_stream(series, CentralConfig::default(), 1.0, default_epoch());
        assert_eq!(recs.len(), 2, "{recs:?}");
        assert_eq!(recs[0].start_k, 500);
        assert_eq!(recs[1].start_k, 800);
        assert!(recs.iter().all(|r| r.bus.is_none() && r.rule == Rule::Central));
    }

    #[test]
    fn missing_samples_are_counted() {
        let mut d = CentralDetector::new(CentralConfig::default(), 1.0);
        d.step(0, None);
        d.step(1, Some(f64::NAN));
        assert_eq!(d.skipped(), 2);
    }
}
