//! Turn a per-sample violation flag into start/end segments.
//!
//! A segment opens on the first violation. It closes once `t1` further
//! samples pass without a violation; its end is the last violation. When
//! the number of violations inside one open segment exceeds `t2`, a
//! persistent notice is emitted immediately and the segment stays open.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub t1: u64,
    pub t2: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { t1: 120, t2: 240 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEvent {
    Persistent { start: u64, at: u64, count: u64 },
    Closed { start: u64, end: u64, count: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Open {
    start: u64,
    last: u64,
    count: u64,
    escalated: bool,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    cfg: SegmentConfig,
    open: Option<Open>,
}

impl Segmenter {
    pub fn new(cfg: SegmentConfig) -> Self {
        Segmenter { cfg, open: None }
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn open_start(&self) -> Option<u64> {
        self.open.map(|o| o.start)
    }

    /// Advance to sample `k`. At most one event is produced per call.
    pub fn step(&mut self, k: u64, violation: bool) -> Option<SegmentEvent> {
        match (&mut self.open, violation) {
            (None, false) => None,
            (None, true) => {
                self.open = Some(Open {
                    start: k,
                    last: k,
                    count: 1,
                    escalated: false,
                });
                self.escalate(k)
            }
            (Some(o), true) => {
                o.last = k;
                o.count += 1;
                self.escalate(k)
            }
            (Some(o), false) => {
                if k.saturating_sub(o.last) > self.cfg.t1 {
                    let ev = SegmentEvent::Closed {
                        start: o.start,
                        end: o.last,
                        count: o.count,
                    };
                    self.open = None;
                    Some(ev)
                } else {
                    None
                }
            }
        }
    }

    fn escalate(&mut self, k: u64) -> Option<SegmentEvent> {
        let o = self.open.as_mut()?;
        if !o.escalated && o.count > self.cfg.t2 {
            o.escalated = true;
            return Some(SegmentEvent::Persistent {
                start: o.start,
                at: k,
                count: o.count,
            });
        }
        None
    }

    /// Close whatever is open, e.g. at the end of a stream.
    pub fn flush(&mut self) -> Option<SegmentEvent> {
        self.open.take().map(|o| SegmentEvent::Closed {
            start: o.start,
            end: o.last,
            count: o.count,
        })
    }
}

/// Run a whole flag sequence (index = sample) through a segmenter.
pub fn segment_events(flags: &[bool], cfg: SegmentConfig) -> Vec<SegmentEvent> {
    let mut s = Segmenter::new(cfg);
    let mut out: Vec<SegmentEvent> = flags
        .iter()
        .enumerate()
        .filter_map(|(k, &f)| s.step(k as u64, f))
        .collect();
    out.extend(s.flush());
    out
}
