//! In-process pipeline: local engines per sensor, fusion, central
//! detection and the merged event log, without any networking.

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use crate::analytics::{AnomalyReport, DerivedSample, LocalConfig, LocalEngine};
use crate::central::{
    build_central_model, fuse_reports, CentralConfig, CentralDetector, CentralModel, EventLog, Fuser, FusionOutput,
};
use crate::model::{BusId, FeederModel, Placement, SystemMatrix};
use crate::synth::SensorStream;
use crate::Result;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub local: LocalConfig,
    pub central: CentralConfig,
    pub align_window: u64,
    /// Keep per-sample derived quantities of every sensor.
    pub keep_derived: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            local: LocalConfig::default(),
            central: CentralConfig::default(),
            align_window: 24,
            keep_derived: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_epoch(mut self, epoch: DateTime<Utc>) -> Self {
        self.local.epoch = epoch;
        self
    }
}

/// Local configuration of the sensor at `bus`, with the ratings of its
/// incident lines.
pub fn local_config_for(base: &LocalConfig, feeder: &FeederModel, bus: BusId) -> LocalConfig {
    let mut cfg = base.clone();
    cfg.ratings = feeder
        .lines
        .iter()
        .filter(|l| l.touches(bus))
        .map(|l| (l.id, l.rated_current))
        .collect();
    cfg
}

pub fn central_model_for(feeder: &FeederModel, sensors: &[BusId]) -> Result<CentralModel> {
    let system = SystemMatrix::build(feeder);
    let placement = Placement::new(sensors.iter().copied())?;
    Ok(build_central_model(system.partition(&placement)?))
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub log: EventLog,
    pub local_reports: Vec<(BusId, AnomalyReport)>,
    pub central_reports: Vec<AnomalyReport>,
    /// Central metric per sample; `None` where a sensor was missing.
    pub x: Vec<(u64, Option<f64>)>,
    pub baseline: f64,
    pub derived: Vec<(BusId, Vec<DerivedSample>)>,
    pub fusion_gaps: u64,
}

/// Run one local engine over a stream, returning reports in emission order.
pub fn run_local(cfg: LocalConfig, stream: &SensorStream, keep_derived: bool) -> (Vec<AnomalyReport>, Vec<DerivedSample>) {
    let mut engine = LocalEngine::new(stream.bus, cfg);
    let mut reports = Vec::new();
    let mut derived = Vec::new();
    for f in &stream.frames {
        let (d, r) = engine.process(f);
        reports.extend(r);
        if keep_derived {
            derived.extend(d);
        }
    }
    reports.extend(engine.flush());
    (reports, derived)
}

/// Central reports, the metric per sample and the number of fusion gaps.
pub type CentralOutput = (Vec<AnomalyReport>, Vec<(u64, Option<f64>)>, u64);

/// Fuse the uplink streams and run central detection.
pub fn run_central(
    model: &CentralModel,
    uplink: &[&SensorStream],
    cfg: &CentralConfig,
    align_window: u64,
    epoch: DateTime<Utc>,
) -> CentralOutput {
    let sensors = model.partition.placement.buses();
    let mut fuser = Fuser::new(sensors, align_window);
    for s in sensors {
        fuser.set_live(*s, true);
    }
    let mut frames: Vec<_> = uplink.iter().flat_map(|s| s.frames.iter()).collect();
    frames.sort_by_key(|f| (f.k, f.bus));
    for f in frames {
        fuser.push(f);
    }
    let mut fused = Vec::new();
    let decided = fuser.finish(&model.partition, &mut fused);
    let mut detector = CentralDetector::new(*cfg, model.baseline).with_epoch(epoch);
    let mut fused = fused.into_iter();
    let mut x = Vec::with_capacity(decided.len());
    let mut reports = Vec::new();
    for d in decided {
        let (k, v) = match d {
            FusionOutput::Complete(k) => (k, model.metric(&fused.next().expect("one per complete").d_a)),
            FusionOutput::Gap { k, .. } => (k, None),
        };
        x.push((k, v));
        reports.extend(detector.step(k, v));
    }
    reports.extend(detector.flush());
    (reports, x, fuser.gaps())
}

/// `streams` holds, per sensor, what it measured and what its uplink
/// carried. Sensors are taken from the streams.
pub fn analyze(feeder: &FeederModel, streams: &[(SensorStream, SensorStream)], cfg: &PipelineConfig) -> Result<Analysis> {
    let sensors: Vec<BusId> = streams.iter().map(|(s, _)| s.bus).collect();
    let model = central_model_for(feeder, &sensors)?;
    let locals: Vec<(BusId, Vec<AnomalyReport>, Vec<DerivedSample>)> = streams
        .par_iter()
        .map(|(clean, _)| {
            let (r, d) = run_local(local_config_for(&cfg.local, feeder, clean.bus), clean, cfg.keep_derived);
            (clean.bus, r, d)
        })
        .collect();
    let uplink: Vec<&SensorStream> = streams.iter().map(|(_, u)| u).collect();
    let (central_reports, x, fusion_gaps) = run_central(&model, &uplink, &cfg.central, cfg.align_window, cfg.local.epoch);
    let mut local_reports = Vec::new();
    let mut derived = Vec::new();
    for (bus, r, d) in locals {
        local_reports.extend(r.into_iter().map(|r| (bus, r)));
        if cfg.keep_derived {
            derived.push((bus, d));
        }
    }
    Ok(Analysis {
        log: fuse_reports(&local_reports, &central_reports),
        local_reports,
        central_reports,
        x,
        baseline: model.baseline,
        derived,
        fusion_gaps,
    })
}
