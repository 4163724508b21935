use std::collections::{BTreeMap, VecDeque};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    classify_trend, classify_voltage, complex_power, qss_correlations, qss_residual, AnomalyReport,
    CusumConfig, DetectorState, EventEnd, FrequencyEstimator, Label, PhasorFrame, Rule, SegmentConfig,
    SegmentEvent, Segmenter, TrendConfig, VoltageThresholds, WindowBuffer,
};
use crate::model::{BusId, LineId};
use crate::phasor::magnitudes;
use crate::time::default_epoch;

/// Noise levels below which a channel's variance estimate is not trusted.
/// Each is a standard deviation in the channel's own unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelFloors {
    /// Active and reactive power, p.u.
    pub power: f64,
    /// Current magnitude, p.u.
    pub current: f64,
    /// Phase advance, rad/sample.
    pub frequency: f64,
    /// Subspace residual.
    pub qss: f64,
}

impl Default for ChannelFloors {
    fn default() -> Self {
        ChannelFloors {
            power: 1e-3,
            current: 1e-3,
            frequency: 3e-4,
            qss: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalConfig {
    pub window: usize,
    pub cusum: CusumConfig,
    pub segment: SegmentConfig,
    pub voltage: VoltageThresholds,
    pub trend: TrendConfig,
    pub floors: ChannelFloors,
    /// Smoothing factor of the frequency estimator.
    pub freq_lambda: f64,
    /// Per-phase line ratings, p.u. Lines not listed are not checked.
    pub ratings: BTreeMap<LineId, [f64; 3]>,
    pub epoch: DateTime<Utc>,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            window: 12,
            cusum: CusumConfig::default(),
            segment: SegmentConfig::default(),
            voltage: VoltageThresholds::default(),
            trend: TrendConfig::default(),
            floors: ChannelFloors::default(),
            freq_lambda: 0.9,
            ratings: BTreeMap::new(),
            epoch: default_epoch(),
        }
    }
}

/// Per-sample quantities of one line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineDerived {
    pub line: LineId,
    pub imag: [f64; 3],
    pub p: [f64; 3],
    pub q: [f64; 3],
    pub qss_residual: Option<f64>,
}

/// Per-sample quantities of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedSample {
    pub k: u64,
    pub vmag: [f64; 3],
    pub beta_hat: Option<f64>,
    pub lines: Vec<LineDerived>,
}

#[derive(Debug, Clone)]
struct Channel {
    det: DetectorState,
    history: VecDeque<f64>,
    noise: f64,
}

impl Channel {
    fn new(cusum: CusumConfig, noise: f64) -> Self {
        Channel {
            det: DetectorState::new(cusum.with_floor(noise, cusum.rel_std_floor)),
            history: VecDeque::new(),
            noise,
        }
    }
}

#[derive(Debug, Clone)]
struct Capture {
    channel: usize,
    pre: Vec<f64>,
    post: Vec<f64>,
}

/// Change-detection rule over a group of channels sharing one segmenter.
#[derive(Debug, Clone)]
struct TrendRule {
    rule: Rule,
    channels: Vec<Channel>,
    seg: Segmenter,
    capture: Option<Capture>,
}

impl TrendRule {
    fn new(rule: Rule, n: usize, cfg: &LocalConfig, noise: f64) -> Self {
        TrendRule {
            rule,
            channels: (0..n).map(|_| Channel::new(cfg.cusum, noise)).collect(),
            seg: Segmenter::new(cfg.segment),
            capture: None,
        }
    }

    fn step(
        &mut self,
        k: u64,
        values: &[f64],
        cfg: &LocalConfig,
        bus: BusId,
        line: Option<LineId>,
        out: &mut Vec<AnomalyReport>,
    ) {
        let alarms: Vec<bool> = self
            .channels
            .iter_mut()
            .zip(values)
            .map(|(c, &x)| c.det.step(k, x).is_change())
            .collect();
        let violation = alarms.iter().any(|&a| a);
        if violation && !self.seg.is_open() {
            let channel = alarms.iter().position(|&a| a).unwrap_or(0);
            self.capture = Some(Capture {
                channel,
                pre: self.channels[channel].history.iter().copied().collect(),
                post: Vec::new(),
            });
        }
        if let Some(c) = &mut self.capture {
            if c.post.len() < cfg.trend.post {
                c.post.push(values[c.channel]);
            }
        }
        for (c, &x) in self.channels.iter_mut().zip(values) {
            if c.history.len() == cfg.trend.pre {
                c.history.pop_front();
            }
            c.history.push_back(x);
        }
        if let Some(ev) = self.seg.step(k, violation) {
            out.extend(self.report(ev, cfg, bus, line));
        }
    }

    fn report(
        &mut self,
        ev: SegmentEvent,
        cfg: &LocalConfig,
        bus: BusId,
        line: Option<LineId>,
    ) -> Option<AnomalyReport> {
        let (start, end) = match ev {
            SegmentEvent::Persistent { start, .. } => (start, EventEnd::Persistent),
            SegmentEvent::Closed { start, end, .. } => (start, EventEnd::At(end)),
        };
        let capture = match ev {
            SegmentEvent::Closed { .. } => self.capture.take()?,
            SegmentEvent::Persistent { .. } => self.capture.clone()?,
        };
        let noise = self.channels[capture.channel].noise;
        let (label, severity) = if self.rule == Rule::QssValidity {
            let peak = capture.post.iter().copied().fold(0.0, f64::max);
            (Label::Transient, peak)
        } else {
            let pre = if capture.pre.len() >= 2 { &capture.pre[..] } else { &capture.post[..1] };
            let label = classify_trend(pre, &capture.post, noise, &cfg.trend);
            (label, mean(&capture.post) - mean(pre))
        };
        Some(AnomalyReport::new(self.rule, label, Some(bus), line, start, end, severity, cfg.epoch))
    }

    fn flush(&mut self, cfg: &LocalConfig, bus: BusId, line: Option<LineId>) -> Option<AnomalyReport> {
        let ev = self.seg.flush()?;
        self.report(ev, cfg, bus, line)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

#[derive(Debug, Clone)]
struct LineState {
    id: LineId,
    window: WindowBuffer,
    p: TrendRule,
    q: TrendRule,
    imag: TrendRule,
    qss: TrendRule,
    overcurrent: Segmenter,
    oc_peak: f64,
}

impl LineState {
    fn new(id: LineId, cfg: &LocalConfig) -> Self {
        LineState {
            id,
            window: WindowBuffer::new(cfg.window),
            p: TrendRule::new(Rule::ActivePower, 3, cfg, cfg.floors.power),
            q: TrendRule::new(Rule::ReactivePower, 3, cfg, cfg.floors.power),
            imag: TrendRule::new(Rule::CurrentMag, 3, cfg, cfg.floors.current),
            qss: TrendRule::new(Rule::QssValidity, 1, cfg, cfg.floors.qss),
            overcurrent: Segmenter::new(cfg.segment),
            oc_peak: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct VoltageTrack {
    seg: Segmenter,
    /// Worst-phase magnitude since the open segment started.
    series: Vec<f64>,
}

/// Rule engine for one sensor.
#[derive(Debug, Clone)]
pub struct LocalEngine {
    bus: BusId,
    cfg: LocalConfig,
    freq: FrequencyEstimator,
    freq_rule: TrendRule,
    voltage: VoltageTrack,
    active_phases: [bool; 3],
    lines: BTreeMap<LineId, LineState>,
    last_k: Option<u64>,
    skipped: u64,
}

impl LocalEngine {
    pub fn new(bus: BusId, cfg: LocalConfig) -> Self {
        LocalEngine {
            bus,
            freq: FrequencyEstimator::new(cfg.freq_lambda),
            freq_rule: TrendRule::new(Rule::Frequency, 1, &cfg, cfg.floors.frequency),
            voltage: VoltageTrack {
                seg: Segmenter::new(cfg.segment),
                series: Vec::new(),
            },
            active_phases: [false; 3],
            lines: BTreeMap::new(),
            last_k: None,
            skipped: 0,
            cfg,
        }
    }

    pub fn bus(&self) -> BusId {
        self.bus
    }

    pub fn config(&self) -> &LocalConfig {
        &self.cfg
    }

    /// Frames dropped for non-finite values or a foreign bus.
    pub fn skipped_frames(&self) -> u64 {
        self.skipped
    }

    pub fn data_quality_flags(&self) -> u64 {
        self.skipped + self.freq.quality_flags()
    }

    /// Process one frame. Returns the derived quantities (or `None` if the
    /// frame was rejected) and any reports that became due.
    pub fn process(&mut self, frame: &PhasorFrame) -> (Option<DerivedSample>, Vec<AnomalyReport>) {
        let mut out = Vec::new();
        if frame.bus != self.bus || !frame.is_finite() || self.last_k.is_some_and(|k| frame.k <= k) {
            self.skipped += 1;
            return (None, out);
        }
        self.last_k = Some(frame.k);
        let k = frame.k;
        let cfg = &self.cfg;

        let vmag = magnitudes(&frame.v);
        for (active, m) in self.active_phases.iter_mut().zip(vmag) {
            if m >= cfg.voltage.interruption {
                *active = true;
            }
        }
        self.voltage_step(k, &vmag, &mut out);

        let beta = self.freq.update(&frame.v);
        if let Some(b) = beta {
            self.freq_rule.step(k, &[b], &self.cfg, self.bus, None, &mut out);
        }

        let mut lines = Vec::with_capacity(frame.i_lines.len());
        for (&id, i) in &frame.i_lines {
            let cfg = &self.cfg;
            let state = self.lines.entry(id).or_insert_with(|| LineState::new(id, cfg));
            let imag = magnitudes(i);
            let (p, q) = complex_power(&frame.v, i);
            state.window.push(*i, frame.v);
            let residual = qss_correlations(&state.window).map(|r| qss_residual(&r));
            state.p.step(k, &p, cfg, self.bus, Some(id), &mut out);
            state.q.step(k, &q, cfg, self.bus, Some(id), &mut out);
            state.imag.step(k, &imag, cfg, self.bus, Some(id), &mut out);
            if let Some(x) = residual {
                state.qss.step(k, &[x], cfg, self.bus, Some(id), &mut out);
            }
            if let Some(rating) = cfg.ratings.get(&id) {
                let flags = super::check_overcurrent(&imag, rating);
                let violation = flags.iter().any(|&f| f);
                if violation {
                    let ratio = (0..3)
                        .filter(|&p| rating[p] > 0.0)
                        .map(|p| imag[p] / rating[p])
                        .fold(0.0, f64::max);
                    if !state.overcurrent.is_open() {
                        state.oc_peak = 0.0;
                    }
                    state.oc_peak = state.oc_peak.max(ratio);
                }
                if let Some(ev) = state.overcurrent.step(k, violation) {
                    out.push(overcurrent_report(ev, self.bus, id, state.oc_peak, cfg.epoch));
                }
            }
            lines.push(LineDerived {
                line: id,
                imag,
                p,
                q,
                qss_residual: residual,
            });
        }
        let sample = DerivedSample {
            k,
            vmag,
            beta_hat: beta,
            lines,
        };
        (Some(sample), out)
    }

    fn voltage_step(&mut self, k: u64, vmag: &[f64; 3], out: &mut Vec<AnomalyReport>) {
        let th = self.cfg.voltage;
        let worst = (0..3)
            .filter(|&p| self.active_phases[p])
            .map(|p| vmag[p])
            .max_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()));
        let Some(worst) = worst else { return };
        let violation = th.violates(worst);
        if violation || self.voltage.seg.is_open() {
            self.voltage.series.push(worst);
        }
        if let Some(ev) = self.voltage.seg.step(k, violation) {
            out.extend(self.voltage_report(ev));
        }
        if !self.voltage.seg.is_open() {
            self.voltage.series.clear();
        }
    }

    fn voltage_report(&self, ev: SegmentEvent) -> Option<AnomalyReport> {
        let (start, end, len) = match ev {
            SegmentEvent::Persistent { start, at, .. } => (start, EventEnd::Persistent, at - start + 1),
            SegmentEvent::Closed { start, end, .. } => (start, EventEnd::At(end), end - start + 1),
        };
        let len = (len as usize).min(self.voltage.series.len());
        let class = classify_voltage(&self.voltage.series[..len], &self.cfg.voltage)?;
        let mut r = AnomalyReport::new(
            Rule::VoltageMag,
            class.label,
            Some(self.bus),
            None,
            start,
            end,
            class.extreme,
            self.cfg.epoch,
        );
        r.out_of_range = class.out_of_range;
        Some(r)
    }

    /// Close every open segment, e.g. at the end of the stream.
    pub fn flush(&mut self) -> Vec<AnomalyReport> {
        let mut out = Vec::new();
        if let Some(ev) = self.voltage.seg.flush() {
            out.extend(self.voltage_report(ev));
            self.voltage.series.clear();
        }
        let cfg = &self.cfg;
        out.extend(self.freq_rule.flush(cfg, self.bus, None));
        for state in self.lines.values_mut() {
            let id = Some(state.id);
            out.extend(state.p.flush(cfg, self.bus, id));
            out.extend(state.q.flush(cfg, self.bus, id));
            out.extend(state.imag.flush(cfg, self.bus, id));
            out.extend(state.qss.flush(cfg, self.bus, id));
            if let Some(ev) = state.overcurrent.flush() {
                out.push(overcurrent_report(ev, self.bus, state.id, state.oc_peak, cfg.epoch));
            }
        }
        out
    }
}

fn overcurrent_report(ev: SegmentEvent, bus: BusId, line: LineId, peak: f64, epoch: DateTime<Utc>) -> AnomalyReport {
    let (start, end) = match ev {
        SegmentEvent::Persistent { start, .. } => (start, EventEnd::Persistent),
        SegmentEvent::Closed { start, end, .. } => (start, EventEnd::At(end)),
    };
    AnomalyReport::new(Rule::Overcurrent, Label::Overcurrent, Some(bus), Some(line), start, end, peak, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::{balanced, scale, Complex64};

    fn frame(k: u64, vmag: f64, i: Complex64) -> PhasorFrame {
        let v = balanced(vmag, 0.0);
        let cur = scale(&balanced(1.0, -0.2), i);
        PhasorFrame {
            k,
            bus: BusId(3),
            v,
            i_lines: BTreeMap::from([(LineId(1), cur)]),
        }
    }

    fn run(frames: impl Iterator<Item = PhasorFrame>, cfg: LocalConfig) -> Vec<AnomalyReport> {
        let mut e = LocalEngine::new(BusId(3), cfg);
        let mut out = Vec::new();
        for f in frames {
            out.extend(e.process(&f).1);
        }
        out.extend(e.flush());
        out
    }

    #[test]
    fn steady_stream_is_quiet() {
        let reports = run((0..2000).map(|k| frame(k, 1.0, Complex64::new(0.5, 0.0))), LocalConfig::default());
        assert!(reports.is_empty(), "{reports:?}");
    }

    #[test]
    fn sag_is_reported_with_label() {
        let frames = (0..1000).map(|k| {
            let mag = if (300..420).contains(&k) { 0.5 } else { 1.0 };
            frame(k, mag, Complex64::new(0.5, 0.0))
        });
        let reports = run(frames, LocalConfig::default());
        let sag: Vec<_> = reports.iter().filter(|r| r.rule == Rule::VoltageMag).collect();
        assert_eq!(sag.len(), 1);
        assert_eq!(sag[0].label, Label::Sag);
        assert_eq!(sag[0].start_k, 300);
        assert_eq!(sag[0].end_k, EventEnd::At(419));
        assert!((sag[0].severity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn current_drop_is_labelled() {
        let frames = (0..1000).map(|k| {
            let i = if k >= 500 { 0.2 } else { 0.5 };
            frame(k, 1.0, Complex64::new(i, 0.0))
        });
        let reports = run(frames, LocalConfig::default());
        let cur: Vec<_> = reports.iter().filter(|r| r.rule == Rule::CurrentMag).collect();
        assert_eq!(cur.len(), 1, "{reports:?}");
        assert_eq!(cur[0].label, Label::Drop);
        assert!((cur[0].start_k as i64 - 500).abs() <= 2);
        let p: Vec<_> = reports.iter().filter(|r| r.rule == Rule::ActivePower).collect();
        assert_eq!(p[0].label, Label::Drop);
    }

    #[test]
    fn overcurrent_against_rating() {
        let mut cfg = LocalConfig::default();
        cfg.ratings.insert(LineId(1), [0.6; 3]);
        let frames = (0..600).map(|k| {
            let i = if (100..110).contains(&k) { 0.7 } else { 0.5 };
            frame(k, 1.0, Complex64::new(i, 0.0))
        });
        let reports = run(frames, cfg);
        let oc: Vec<_> = reports.iter().filter(|r| r.rule == Rule::Overcurrent).collect();
        assert_eq!(oc.len(), 1);
        assert_eq!((oc[0].start_k, oc[0].end_k), (100, EventEnd::At(109)));
    }

    #[test]
    fn rejects_out_of_order_and_foreign_frames() {
        let mut e = LocalEngine::new(BusId(3), LocalConfig::default());
        assert!(e.process(&frame(5, 1.0, Complex64::new(0.1, 0.0))).0.is_some());
        assert!(e.process(&frame(5, 1.0, Complex64::new(0.1, 0.0))).0.is_none());
        let mut f = frame(6, 1.0, Complex64::new(0.1, 0.0));
        f.bus = BusId(4);
        assert!(e.process(&f).0.is_none());
        assert_eq!(e.skipped_frames(), 2);
    }
}
