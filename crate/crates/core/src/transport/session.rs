//! Per-sensor session bookkeeping on the central side.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::model::BusId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    NeverConnected,
    Connected,
    Disconnected(Instant),
    Ended,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorSession {
    pub last_k: Option<u64>,
    /// Sample indices skipped between consecutive accepted frames.
    pub gaps: u64,
    pub duplicates: u64,
    pub next_report: u64,
    pub connection: Connection,
    pub sessions: u32,
}

impl SensorSession {
    fn new() -> Self {
        SensorSession {
            last_k: None,
            gaps: 0,
            duplicates: 0,
            next_report: 0,
            connection: Connection::NeverConnected,
            sessions: 0,
        }
    }

    /// Next frame index wanted from this sensor.
    pub fn next_k(&self) -> u64 {
        self.last_k.map_or(0, |k| k + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Accepted,
    Duplicate,
    UnknownSensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    sensors: BTreeMap<BusId, SensorSession>,
}

impl SessionState {
    pub fn new(sensors: &[BusId]) -> Self {
        SessionState {
            sensors: sensors.iter().map(|b| (*b, SensorSession::new())).collect(),
        }
    }

    pub fn get(&self, bus: BusId) -> Option<&SensorSession> {
        self.sensors.get(&bus)
    }

    pub fn get_mut(&mut self, bus: BusId) -> Option<&mut SensorSession> {
        self.sensors.get_mut(&bus)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BusId, &SensorSession)> {
        self.sensors.iter()
    }

    /// Record a frame index; the first copy of each index wins.
    pub fn observe_frame(&mut self, bus: BusId, k: u64) -> FrameStatus {
        let Some(s) = self.sensors.get_mut(&bus) else {
            return FrameStatus::UnknownSensor;
        };
        match s.last_k {
            Some(last) if k <= last => {
                s.duplicates += 1;
                FrameStatus::Duplicate
            }
            _ => {
                s.gaps += k - s.next_k();
                s.last_k = Some(k);
                FrameStatus::Accepted
            }
        }
    }

    /// Record a report sequence number; returns false for a repeat.
    pub fn observe_report(&mut self, bus: BusId, seq: u64) -> bool {
        match self.sensors.get_mut(&bus) {
            Some(s) if seq >= s.next_report => {
                s.next_report = seq + 1;
                true
            }
            _ => false,
        }
    }

    pub fn total_gaps(&self) -> u64 {
        self.sensors.values().map(|s| s.gaps).sum()
    }

    pub fn total_duplicates(&self) -> u64 {
        self.sensors.values().map(|s| s.duplicates).sum()
    }

    pub fn all_ended(&self) -> bool {
        self.sensors.values().all(|s| s.connection == Connection::Ended)
    }
}
