//! Central process: one handler thread per sensor connection feeding a
//! single sequencer that owns fusion, detection and the event log.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

use super::codec::{read_message, write_message, Body, Codec, Kind, Message};
use super::session::{Connection, FrameStatus, SessionState};
use crate::analytics::AnomalyReport;
use crate::central::{fuse_reports, CentralConfig, CentralDetector, CentralModel, EventLog, FusedSample, Fuser, FusionOutput};
use crate::model::BusId;
use crate::{Error, Result};

pub const DEFAULT_PORT: u16 = 7435;

#[derive(Debug, Clone)]
pub struct CentralServeConfig {
    pub codec: Codec,
    pub central: CentralConfig,
    /// Samples to wait for a straggling sensor before declaring a gap.
    pub align_window: u64,
    /// How long a sensor may be absent before its samples count as gaps.
    pub grace: Duration,
    /// Acknowledge every this many frames.
    pub ack_every: u64,
    pub epoch: DateTime<Utc>,
    /// Keep the order in which messages arrived, for inspection.
    pub record_arrivals: bool,
}

impl Default for CentralServeConfig {
    fn default() -> Self {
        CentralServeConfig {
            codec: Codec::Binary,
            central: CentralConfig::default(),
            align_window: 24,
            grace: Duration::from_secs(5),
            ack_every: 120,
            epoch: crate::time::default_epoch(),
            record_arrivals: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CentralRun {
    pub log: EventLog,
    /// Metric per decided sample; `None` for gaps.
    pub x: Vec<(u64, Option<f64>)>,
    pub sessions: SessionState,
    pub fusion_gaps: u64,
    pub rejected: u64,
    pub arrivals: Vec<(BusId, Kind, u64)>,
}

enum Event {
    Hello(BusId, TcpStream),
    Message(BusId, Message),
    Closed(BusId),
    Rejected,
}

pub struct CentralServer {
    listener: TcpListener,
    model: CentralModel,
    cfg: CentralServeConfig,
}

impl CentralServer {
    pub fn bind(addr: &str, model: CentralModel, cfg: CentralServeConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Network(format!("bind {addr}: {e}")))?;
        Ok(CentralServer { listener, model, cfg })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| Error::Network(e.to_string()))
    }

    /// Serve until every sensor has said goodbye (or never showed up within
    /// the grace period) or `shutdown` is raised.
    pub fn run(self, shutdown: Arc<AtomicBool>) -> Result<CentralRun> {
        let sensors = self.model.partition.placement.buses().to_vec();
        let (tx, rx) = mpsc::channel();
        let done = Arc::new(AtomicBool::new(false));
        self.listener.set_nonblocking(true).map_err(|e| Error::Network(e.to_string()))?;
        let acceptor = {
            let done = done.clone();
            let shutdown = shutdown.clone();
            let sensors = sensors.clone();
            let codec = self.cfg.codec;
            let listener = self.listener;
            thread::spawn(move || accept_loop(listener, tx, sensors, codec, done, shutdown))
        };
        let mut seq = Sequencer::new(&self.model, &self.cfg, &sensors);
        let out = seq.run(rx, &shutdown);
        done.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        out
    }
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Event>,
    sensors: Vec<BusId>,
    codec: Codec,
    done: Arc<AtomicBool>,
    shutdown: Arc<AtomicBool>,
) {
    while !done.load(Ordering::SeqCst) && !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                let tx = tx.clone();
                let sensors = sensors.clone();
                thread::spawn(move || handle(stream, tx, &sensors, codec));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

/// Session handler: expects `Hello`, then forwards everything in order.
fn handle(stream: TcpStream, tx: Sender<Event>, sensors: &[BusId], codec: Codec) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let bus = match read_message(&mut reader, codec) {
        Ok(Some(Message {
            sensor,
            body: Body::Hello { .. },
            ..
        })) if sensors.contains(&sensor) => sensor,
        other => {
            log::warn!("rejecting session: {other:?}");
            let mut w = BufWriter::new(&stream);
            let bye = Message {
                sensor: BusId(0),
                k: 0,
                body: Body::Bye,
            };
            let _ = write_message(&mut w, &bye, codec).and_then(|_| w.flush());
            let _ = stream.shutdown(Shutdown::Both);
            let _ = tx.send(Event::Rejected);
            return;
        }
    };
    if tx.send(Event::Hello(bus, stream)).is_err() {
        return;
    }
    loop {
        match read_message(&mut reader, codec) {
            Ok(Some(m)) if m.sensor == bus => {
                if tx.send(Event::Message(bus, m)).is_err() {
                    return;
                }
            }
            Ok(Some(m)) => log::warn!("sensor {bus} sent a message for {}", m.sensor),
            Ok(None) => break,
            Err(e) => {
                log::warn!("sensor {bus}: {e}");
                break;
            }
        }
    }
    let _ = tx.send(Event::Closed(bus));
}

struct Sequencer<'a> {
    model: &'a CentralModel,
    cfg: &'a CentralServeConfig,
    started: Instant,
    sessions: SessionState,
    writers: BTreeMap<BusId, BufWriter<TcpStream>>,
    since_ack: BTreeMap<BusId, u64>,
    fuser: Fuser,
    detector: CentralDetector,
    local: Vec<(BusId, AnomalyReport)>,
    central: Vec<AnomalyReport>,
    x: Vec<(u64, Option<f64>)>,
    rejected: u64,
    arrivals: Vec<(BusId, Kind, u64)>,
}

impl<'a> Sequencer<'a> {
    fn new(model: &'a CentralModel, cfg: &'a CentralServeConfig, sensors: &[BusId]) -> Self {
        let mut fuser = Fuser::new(sensors, cfg.align_window);
        for s in sensors {
            fuser.set_live(*s, true);
        }
        Sequencer {
            model,
            cfg,
            started: Instant::now(),
            sessions: SessionState::new(sensors),
            writers: BTreeMap::new(),
            since_ack: BTreeMap::new(),
            fuser,
            detector: CentralDetector::new(cfg.central, model.baseline).with_epoch(cfg.epoch),
            local: Vec::new(),
            central: Vec::new(),
            x: Vec::new(),
            rejected: 0,
            arrivals: Vec::new(),
        }
    }

    fn send(&mut self, bus: BusId, m: Message) {
        if let Some(w) = self.writers.get_mut(&bus) {
            if write_message(w, &m, self.cfg.codec).and_then(|_| w.flush()).is_err() {
                self.writers.remove(&bus);
            }
        }
    }

    fn ack(&mut self, bus: BusId, kind: Kind) {
        let s = self.sessions.get(bus).expect("known sensor");
        let (k, next_report) = (s.next_k(), s.next_report);
        let body = match kind {
            Kind::Hello => Body::Hello { next_report },
            _ => Body::Heartbeat { next_report },
        };
        self.send(bus, Message { sensor: bus, k, body });
        self.since_ack.insert(bus, 0);
    }

    fn on_event(&mut self, ev: Event) {
        match ev {
            Event::Rejected => self.rejected += 1,
            Event::Hello(bus, stream) => {
                let s = self.sessions.get_mut(bus).expect("handler checks sensor");
                s.sessions += 1;
                if s.connection != Connection::Ended {
                    s.connection = Connection::Connected;
                }
                self.fuser.set_live(bus, true);
                self.writers.insert(bus, BufWriter::new(stream));
                self.ack(bus, Kind::Hello);
            }
            Event::Closed(bus) => {
                let s = self.sessions.get_mut(bus).expect("known sensor");
                if s.connection == Connection::Connected {
                    s.connection = Connection::Disconnected(Instant::now());
                }
                self.writers.remove(&bus);
            }
            Event::Message(bus, m) => {
                if self.cfg.record_arrivals {
                    self.arrivals.push((bus, m.kind(), m.k));
                }
                self.on_message(bus, m);
            }
        }
    }

    fn on_message(&mut self, bus: BusId, m: Message) {
        match &m.body {
            Body::Frame { .. } => {
                if self.sessions.observe_frame(bus, m.k) == FrameStatus::Accepted {
                    self.fuser.push(&m.to_frame().expect("frame body"));
                }
                let n = self.since_ack.entry(bus).or_insert(0);
                *n += 1;
                if *n >= self.cfg.ack_every {
                    self.ack(bus, Kind::Heartbeat);
                }
            }
            Body::Report(r) => {
                if self.sessions.observe_report(bus, m.k) {
                    self.local.push((bus, (**r).clone()));
                }
            }
            Body::Heartbeat { .. } => self.ack(bus, Kind::Heartbeat),
            Body::Hello { .. } => {}
            Body::Bye => {
                let s = self.sessions.get_mut(bus).expect("known sensor");
                if s.next_k() >= m.k {
                    s.connection = Connection::Ended;
                    self.fuser.end(bus);
                }
                self.ack(bus, Kind::Heartbeat);
                self.send(
                    bus,
                    Message {
                        sensor: bus,
                        k: m.k,
                        body: Body::Bye,
                    },
                );
            }
        }
    }

    /// Mark sensors absent for longer than the grace period.
    fn expire(&mut self) {
        let now = Instant::now();
        let grace = self.cfg.grace;
        let started = self.started;
        let stale: Vec<BusId> = self
            .sessions
            .iter()
            .filter(|(_, s)| match s.connection {
                Connection::NeverConnected => now.duration_since(started) > grace,
                Connection::Disconnected(t) => now.duration_since(t) > grace,
                _ => false,
            })
            .map(|(b, _)| *b)
            .collect();
        for b in stale {
            self.fuser.set_live(b, false);
        }
    }

    fn settled(&self) -> bool {
        let now = Instant::now();
        let any_ended = self.sessions.iter().any(|(_, s)| s.connection == Connection::Ended);
        self.sessions.iter().all(|(_, s)| match s.connection {
            Connection::Ended => true,
            Connection::NeverConnected => any_ended && now.duration_since(self.started) > self.cfg.grace,
            Connection::Disconnected(t) => any_ended && now.duration_since(t) > self.cfg.grace,
            Connection::Connected => false,
        })
    }

    fn consume(&mut self, decided: Vec<FusionOutput>, fused: Vec<FusedSample>) {
        let mut fused = fused.into_iter();
        for d in decided {
            let (k, x) = match d {
                FusionOutput::Complete(k) => {
                    let s = fused.next().expect("one sample per complete output");
                    (k, self.model.metric(&s.d_a))
                }
                FusionOutput::Gap { k, .. } => (k, None),
            };
            self.x.push((k, x));
            self.central.extend(self.detector.step(k, x));
        }
    }

    fn drain(&mut self) {
        let mut fused = Vec::new();
        let decided = self.fuser.drain(&self.model.partition, &mut fused);
        self.consume(decided, fused);
    }

    fn run(&mut self, rx: Receiver<Event>, shutdown: &AtomicBool) -> Result<CentralRun> {
        loop {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(ev) => {
                    self.on_event(ev);
                    while let Ok(ev) = rx.try_recv() {
                        self.on_event(ev);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            self.expire();
            self.drain();
            if self.settled() || shutdown.load(Ordering::SeqCst) {
                break;
            }
        }
        let mut fused = Vec::new();
        let decided = self.fuser.finish(&self.model.partition, &mut fused);
        self.consume(decided, fused);
        self.central.extend(self.detector.flush());
        for w in self.writers.values() {
            let _ = w.get_ref().shutdown(Shutdown::Both);
        }
        Ok(CentralRun {
            log: fuse_reports(&self.local, &self.central),
            x: std::mem::take(&mut self.x),
            sessions: self.sessions.clone(),
            fusion_gaps: self.fuser.gaps(),
            rejected: self.rejected,
            arrivals: std::mem::take(&mut self.arrivals),
        })
    }
}
