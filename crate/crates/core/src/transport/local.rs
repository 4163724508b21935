//! Sensor-side process: runs the local engine over a frame source and ships
//! reports and frames to the central process.
//!
//! Everything sent is retained until the central side acknowledges it, so a
//! dropped connection loses nothing: on reconnect the central `Hello` names
//! the resume point and the backlog is resent, reports first.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{decode, encode, read_message, write_message, Body, Codec, Message};
use crate::analytics::{AnomalyReport, LocalEngine, PhasorFrame};
use crate::model::BusId;
use crate::{Error, Result};

/// Drop the link once sample `at_k` is produced and keep it down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    pub at_k: u64,
    pub down_for: Duration,
}

#[derive(Debug, Clone)]
pub struct LocalServeConfig {
    pub central: String,
    pub codec: Codec,
    pub reconnect_every: Duration,
    /// After the source is exhausted, how long to wait for acknowledgement.
    pub linger: Duration,
    pub heartbeat: Duration,
    /// Unacknowledged messages are written here on disconnect and exit.
    pub spool_dir: Option<PathBuf>,
    pub fault: Option<FaultInjection>,
}

impl Default for LocalServeConfig {
    fn default() -> Self {
        LocalServeConfig {
            central: format!("127.0.0.1:{}", super::DEFAULT_PORT),
            codec: Codec::Binary,
            reconnect_every: Duration::from_millis(200),
            linger: Duration::from_secs(30),
            heartbeat: Duration::from_secs(1),
            spool_dir: None,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    pub reports: Vec<AnomalyReport>,
    pub frames: u64,
    pub connections: u32,
    /// Messages never acknowledged (left in the spool).
    pub unacknowledged: usize,
}

/// `(next frame, next report)` the central side has.
type Ack = (u64, u64);

struct Link {
    writer: BufWriter<TcpStream>,
    acks: Receiver<Option<Ack>>,
    /// Central sent `Bye` in answer to ours.
    closed_by_peer: bool,
}

struct Outbox {
    bus: BusId,
    reports: VecDeque<(u64, AnomalyReport)>,
    frames: VecDeque<PhasorFrame>,
    next_seq: u64,
    /// Send cursors: first report sequence / frame index not yet written on
    /// the current link.
    send_seq: u64,
    send_k: u64,
    end_k: Option<u64>,
    bye_sent: bool,
}

impl Outbox {
    fn acked(&mut self, (k, seq): Ack) {
        while self.frames.front().is_some_and(|f| f.k < k) {
            self.frames.pop_front();
        }
        while self.reports.front().is_some_and(|(s, _)| *s < seq) {
            self.reports.pop_front();
        }
    }

    fn rewind(&mut self, (k, seq): Ack) {
        self.acked((k, seq));
        self.send_k = k;
        self.send_seq = seq;
        self.bye_sent = false;
    }

    fn len(&self) -> usize {
        self.reports.len() + self.frames.len()
    }

    fn messages(&self) -> impl Iterator<Item = Message> + '_ {
        let reports = self.reports.iter().map(|(seq, r)| Message {
            sensor: self.bus,
            k: *seq,
            body: Body::Report(Box::new(r.clone())),
        });
        reports.chain(self.frames.iter().map(Message::frame))
    }
}

fn spool_path(dir: &Path, bus: BusId) -> PathBuf {
    dir.join(format!("sensor_{}.spool", bus.0))
}

fn write_spool(dir: &Path, out: &Outbox) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = spool_path(dir, out.bus);
    if out.len() == 0 {
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        return Ok(());
    }
    let mut bytes = Vec::new();
    for m in out.messages() {
        bytes.extend(encode(&m));
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Messages left by an earlier run.
pub fn read_spool(dir: &Path, bus: BusId) -> Result<Vec<Message>> {
    let path = spool_path(dir, bus);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (m, used) = decode(&bytes[pos..])?;
        out.push(m);
        pos += used;
    }
    Ok(out)
}

fn connect(cfg: &LocalServeConfig, bus: BusId) -> Option<(Link, Ack)> {
    let addr = cfg.central.to_socket_addrs().ok()?.next()?;
    let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2)).ok()?;
    let _ = stream.set_nodelay(true);
    let mut writer = BufWriter::new(stream.try_clone().ok()?);
    let hello = Message {
        sensor: bus,
        k: 0,
        body: Body::Hello { next_report: 0 },
    };
    write_message(&mut writer, &hello, cfg.codec).and_then(|_| writer.flush()).ok()?;
    let (tx, rx) = mpsc::channel();
    let codec = cfg.codec;
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        while let Ok(Some(m)) = read_message(&mut r, codec) {
            let ack = match m.body {
                Body::Hello { next_report } | Body::Heartbeat { next_report } => Some((m.k, next_report)),
                Body::Bye => None,
                _ => continue,
            };
            if tx.send(ack).is_err() {
                return;
            }
        }
    });
    let first = rx.recv_timeout(Duration::from_secs(5)).ok()??;
    Some((
        Link {
            writer,
            acks: rx,
            closed_by_peer: false,
        },
        first,
    ))
}

struct Runner<'a> {
    cfg: &'a LocalServeConfig,
    out: Outbox,
    link: Option<Link>,
    down_until: Option<Instant>,
    next_attempt: Instant,
    last_heartbeat: Instant,
    connections: u32,
    finished: bool,
}

impl Runner<'_> {
    fn drop_link(&mut self) {
        if let Some(l) = self.link.take() {
            let _ = l.writer.get_ref().shutdown(Shutdown::Both);
        }
        if let Some(dir) = &self.cfg.spool_dir {
            if let Err(e) = write_spool(dir, &self.out) {
                log::warn!("spool: {e}");
            }
        }
    }

    fn ensure_link(&mut self) {
        let now = Instant::now();
        if self.link.is_some() || now < self.next_attempt || self.down_until.is_some_and(|t| now < t) {
            return;
        }
        self.next_attempt = now + self.cfg.reconnect_every;
        if let Some((link, ack)) = connect(self.cfg, self.out.bus) {
            self.connections += 1;
            self.out.rewind(ack);
            self.link = Some(link);
        }
    }

    /// Apply pending acks and write everything not yet written, reports
    /// before frames.
    fn pump(&mut self) {
        self.ensure_link();
        let Some(link) = &mut self.link else { return };
        let mut lost = false;
        loop {
            match link.acks.try_recv() {
                Ok(Some(ack)) => self.out.acked(ack),
                Ok(None) => link.closed_by_peer = true,
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    lost = true;
                    break;
                }
            }
        }
        if link.closed_by_peer && self.out.len() == 0 {
            self.finished = true;
            return;
        }
        let codec = self.cfg.codec;
        let bus = self.out.bus;
        let mut wrote = false;
        let mut send = |w: &mut BufWriter<TcpStream>, m: &Message| {
            wrote = true;
            write_message(w, m, codec)
        };
        let mut result = Ok(());
        let (first_seq, first_k) = (self.out.send_seq, self.out.send_k);
        for (seq, r) in self.out.reports.iter().filter(|(s, _)| *s >= first_seq) {
            let m = Message {
                sensor: bus,
                k: *seq,
                body: Body::Report(Box::new(r.clone())),
            };
            result = result.and_then(|_| send(&mut link.writer, &m));
            self.out.send_seq = seq + 1;
        }
        for f in self.out.frames.iter().filter(|f| f.k >= first_k) {
            result = result.and_then(|_| send(&mut link.writer, &Message::frame(f)));
            self.out.send_k = f.k + 1;
        }
        if let (Some(end), false) = (self.out.end_k, self.out.bye_sent) {
            if self.out.send_k >= end || self.out.frames.is_empty() {
                let bye = Message {
                    sensor: bus,
                    k: end,
                    body: Body::Bye,
                };
                result = result.and_then(|_| send(&mut link.writer, &bye));
                self.out.bye_sent = true;
            }
        }
        if self.last_heartbeat.elapsed() >= self.cfg.heartbeat {
            let hb = Message {
                sensor: bus,
                k: self.out.send_k,
                body: Body::Heartbeat {
                    next_report: self.out.send_seq,
                },
            };
            result = result.and_then(|_| send(&mut link.writer, &hb));
            self.last_heartbeat = Instant::now();
        }
        if wrote {
            result = result.and_then(|_| link.writer.flush());
        }
        if result.is_err() || lost {
            self.drop_link();
        }
    }

    fn delivered(&self) -> bool {
        self.finished
    }
}

/// Run the local engine over `source` (pairs of measured frame and the
/// frame to put on the uplink) and stream results to the central process.
pub fn serve_local(
    mut engine: LocalEngine,
    source: impl IntoIterator<Item = (PhasorFrame, PhasorFrame)>,
    cfg: &LocalServeConfig,
    shutdown: Arc<AtomicBool>,
) -> Result<LocalRun> {
    let bus = engine.bus();
    let mut out = Outbox {
        bus,
        reports: VecDeque::new(),
        frames: VecDeque::new(),
        next_seq: 0,
        send_seq: 0,
        send_k: 0,
        end_k: None,
        bye_sent: false,
    };
    if let Some(dir) = &cfg.spool_dir {
        for m in read_spool(dir, bus)? {
            match m.body {
                Body::Report(r) => {
                    out.reports.push_back((m.k, *r));
                    out.next_seq = out.next_seq.max(m.k + 1);
                }
                _ => out.frames.extend(m.to_frame()),
            }
        }
    }
    let mut run = Runner {
        cfg,
        out,
        link: None,
        down_until: None,
        next_attempt: Instant::now(),
        last_heartbeat: Instant::now(),
        connections: 0,
        finished: false,
    };
    let mut all_reports = Vec::new();
    let mut frames = 0;
    let mut last_k = None;
    for (measured, uplink) in source {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let (_, reports) = engine.process(&measured);
        for r in reports {
            all_reports.push(r.clone());
            run.out.reports.push_back((run.out.next_seq, r));
            run.out.next_seq += 1;
        }
        last_k = Some(uplink.k);
        run.out.frames.push_back(uplink);
        frames += 1;
        if let Some(f) = cfg.fault.filter(|f| Some(f.at_k) == last_k) {
            run.drop_link();
            run.down_until = Some(Instant::now() + f.down_for);
        }
        run.pump();
    }
    for r in engine.flush() {
        all_reports.push(r.clone());
        run.out.reports.push_back((run.out.next_seq, r));
        run.out.next_seq += 1;
    }
    run.out.end_k = Some(last_k.map_or(0, |k| k + 1));
    let deadline = Instant::now() + cfg.linger;
    while !run.delivered() && Instant::now() < deadline && !shutdown.load(Ordering::SeqCst) {
        run.pump();
        thread::sleep(Duration::from_millis(5));
    }
    let unacknowledged = run.out.len();
    run.drop_link();
    if unacknowledged > 0 {
        log::warn!("sensor {bus}: {unacknowledged} messages left unacknowledged");
    }
    Ok(LocalRun {
        reports: all_reports,
        frames,
        connections: run.connections,
        unacknowledged,
    })
}
