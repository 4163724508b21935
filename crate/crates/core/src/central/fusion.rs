//! Align per-sensor frames by sample index into fused measurement vectors.
//!
//! A sample is complete once every sensor has delivered it. It is declared
//! a gap when a sensor is known not to deliver it: that sensor has already
//! sent a later sample, its stream has ended, or it is disconnected while
//! the others are more than `align_window` samples ahead.

use std::collections::BTreeMap;

use crate::analytics::PhasorFrame;
use crate::model::{BusId, PartitionedSystem};
use crate::phasor::{Complex64, Phasor3};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    pub k: u64,
    pub d_a: Vec<Complex64>,
    /// Per sensor, in placement order.
    pub completeness: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionOutput {
    Complete(u64),
    Gap { k: u64, missing: usize },
}

#[derive(Debug, Clone, Default)]
struct SensorQueue {
    last_k: Option<u64>,
    live: bool,
    ended: bool,
}

#[derive(Debug, Clone)]
pub struct Fuser {
    sensors: Vec<BusId>,
    queues: Vec<SensorQueue>,
    align_window: u64,
    next_k: Option<u64>,
    pending: BTreeMap<u64, Vec<Option<(Phasor3, Phasor3)>>>,
    gaps: u64,
    duplicates: u64,
    late: u64,
}

impl Fuser {
    /// Sensors in placement order. All start disconnected.
    pub fn new(sensors: &[BusId], align_window: u64) -> Self {
        Fuser {
            sensors: sensors.to_vec(),
            queues: vec![SensorQueue::default(); sensors.len()],
            align_window,
            next_k: None,
            pending: BTreeMap::new(),
            gaps: 0,
            duplicates: 0,
            late: 0,
        }
    }

    fn slot(&self, bus: BusId) -> Option<usize> {
        self.sensors.iter().position(|&b| b == bus)
    }

    pub fn set_live(&mut self, bus: BusId, live: bool) {
        if let Some(s) = self.slot(bus) {
            self.queues[s].live = live;
        }
    }

    /// The sensor will send nothing more.
    pub fn end(&mut self, bus: BusId) {
        if let Some(s) = self.slot(bus) {
            self.queues[s].ended = true;
            self.queues[s].live = false;
        }
    }

    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    /// Frames that arrived after their sample was already declared a gap.
    pub fn late(&self) -> u64 {
        self.late
    }

    /// Add a frame. Returns `false` for an unknown sensor.
    pub fn push(&mut self, frame: &PhasorFrame) -> bool {
        let Some(s) = self.slot(frame.bus) else { return false };
        let q = &mut self.queues[s];
        if q.last_k.is_some_and(|last| frame.k <= last) {
            self.duplicates += 1;
            return true;
        }
        q.last_k = Some(frame.k);
        if self.next_k.is_some_and(|n| frame.k < n) {
            self.late += 1;
            return true;
        }
        self.pending
            .entry(frame.k)
            .or_insert_with(|| vec![None; self.sensors.len()])[s] = Some((frame.net_injection(), frame.v));
        true
    }

    /// Emit every sample that can be decided now, in order.
    pub fn drain(&mut self, part: &PartitionedSystem, out: &mut Vec<FusedSample>) -> Vec<FusionOutput> {
        let mut decided = Vec::new();
        let newest = self.queues.iter().filter_map(|q| q.last_k).max();
        while let Some((&k, slots)) = self.pending.iter().next() {
            let mut missing = 0;
            let mut undecided = false;
            for (s, slot) in slots.iter().enumerate() {
                if slot.is_some() {
                    continue;
                }
                let q = &self.queues[s];
                let known_absent = q.last_k.is_some_and(|last| last > k)
                    || q.ended
                    || (!q.live && newest.is_some_and(|n| n > k + self.align_window));
                if known_absent {
                    missing += 1;
                } else {
                    undecided = true;
                }
            }
            if undecided {
                break;
            }
            let slots = self.pending.remove(&k).expect("present");
            self.next_k = Some(k + 1);
            if missing == 0 {
                let per_sensor: Vec<(Phasor3, Phasor3)> = slots.into_iter().map(|s| s.expect("complete")).collect();
                out.push(FusedSample {
                    k,
                    d_a: part.available_vector(&per_sensor),
                    completeness: vec![true; self.sensors.len()],
                });
                decided.push(FusionOutput::Complete(k));
            } else {
                self.gaps += 1;
                decided.push(FusionOutput::Gap { k, missing });
            }
        }
        decided
    }

    /// Declare everything still pending, e.g. when all streams are over.
    pub fn finish(&mut self, part: &PartitionedSystem, out: &mut Vec<FusedSample>) -> Vec<FusionOutput> {
        for q in &mut self.queues {
            q.ended = true;
            q.live = false;
        }
        self.drain(part, out)
    }
}
