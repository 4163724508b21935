//! Message codec: length-prefixed little-endian binary, or one JSON object
//! per line for debugging. The byte layout is described in
//! `docs/protocol.md`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::analytics::{AnomalyReport, PhasorFrame};
use crate::model::{BusId, LineId};
use crate::phasor::{Complex64, Phasor3};

pub const VERSION: u8 = 1;
/// Upper bound on the length field, bytes.
pub const MAX_MESSAGE: u32 = 1 << 20;
/// version + kind + sensor + k.
const HEADER_LEN: usize = 1 + 1 + 4 + 8;
const CRC_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("protocol version {0} is not supported (expected {VERSION})")]
    Version(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("checksum mismatch: header says {expected:#010x}, body hashes to {actual:#010x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("message length {0} out of range")]
    Length(u32),
    #[error("malformed {kind} payload: {reason}")]
    Payload { kind: &'static str, reason: String },
    #[error("malformed json message: {0}")]
    Json(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Hello = 1,
    Frame = 2,
    Report = 3,
    Heartbeat = 4,
    Bye = 5,
}

impl Kind {
    fn from_u8(b: u8) -> Result<Kind, CodecError> {
        Ok(match b {
            1 => Kind::Hello,
            2 => Kind::Frame,
            3 => Kind::Report,
            4 => Kind::Heartbeat,
            5 => Kind::Bye,
            other => return Err(CodecError::UnknownKind(other)),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::Frame => "frame",
            Kind::Report => "report",
            Kind::Heartbeat => "heartbeat",
            Kind::Bye => "bye",
        }
    }
}

/// Kind-specific body. The meaning of the header `k` per kind is given in
/// the protocol notes.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    /// Sensor to central: open a session. Central to sensor: resume point,
    /// with `k` the next frame wanted.
    Hello { next_report: u64 },
    Frame { v: Phasor3, lines: BTreeMap<LineId, Phasor3> },
    /// `k` is the report's sequence number within the sensor's session.
    Report(Box<AnomalyReport>),
    /// Sensor to central: liveness. Central to sensor: acknowledgement of
    /// frames below `k` and reports below `next_report`.
    Heartbeat { next_report: u64 },
    /// `k` is one past the last frame the sender will produce.
    Bye,
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Hello { .. } => Kind::Hello,
            Body::Frame { .. } => Kind::Frame,
            Body::Report(_) => Kind::Report,
            Body::Heartbeat { .. } => Kind::Heartbeat,
            Body::Bye => Kind::Bye,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sensor: BusId,
    pub k: u64,
    pub body: Body,
}

impl Message {
    pub fn frame(f: &PhasorFrame) -> Self {
        Message {
            sensor: f.bus,
            k: f.k,
            body: Body::Frame {
                v: f.v,
                lines: f.i_lines.clone(),
            },
        }
    }

    pub fn to_frame(&self) -> Option<PhasorFrame> {
        match &self.body {
            Body::Frame { v, lines } => Some(PhasorFrame {
                k: self.k,
                bus: self.sensor,
                v: *v,
                i_lines: lines.clone(),
            }),
            _ => None,
        }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }
}

/// Wire format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Codec {
    #[default]
    Binary,
    Json,
}

fn put_phasor(out: &mut Vec<u8>, p: &Phasor3) {
    for z in p {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

fn payload(body: &Body) -> Vec<u8> {
    let mut out = Vec::new();
    match body {
        Body::Hello { next_report } | Body::Heartbeat { next_report } => {
            out.extend_from_slice(&next_report.to_le_bytes());
        }
        Body::Frame { v, lines } => {
            put_phasor(&mut out, v);
            let n = u16::try_from(lines.len()).expect("frame has at most 65535 lines");
            out.extend_from_slice(&n.to_le_bytes());
            for (id, i) in lines {
                out.extend_from_slice(&id.0.to_le_bytes());
                put_phasor(&mut out, i);
            }
        }
        Body::Report(r) => out.extend_from_slice(r.to_json_line().as_bytes()),
        Body::Bye => {}
    }
    out
}

/// Encode one message, length prefix included.
pub fn encode(m: &Message) -> Vec<u8> {
    let body = payload(&m.body);
    let len = (HEADER_LEN + body.len() + CRC_LEN) as u32;
    let mut out = Vec::with_capacity(4 + len as usize);
    out.extend_from_slice(&len.to_le_bytes());
    out.push(VERSION);
    out.push(m.kind() as u8);
    out.extend_from_slice(&m.sensor.0.to_le_bytes());
    out.extend_from_slice(&m.k.to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: Kind,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or(CodecError::Payload {
            kind: self.kind.name(),
            reason: format!("needs {n} more bytes at offset {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn phasor(&mut self) -> Result<Phasor3, CodecError> {
        let mut p = [Complex64::new(0.0, 0.0); 3];
        for z in &mut p {
            *z = Complex64::new(self.f64()?, self.f64()?);
        }
        Ok(p)
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError::Payload {
                kind: self.kind.name(),
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            })
        }
    }
}

fn parse_body(kind: Kind, buf: &[u8]) -> Result<Body, CodecError> {
    let mut c = Cursor { buf, pos: 0, kind };
    let body = match kind {
        Kind::Hello => Body::Hello { next_report: c.u64()? },
        Kind::Heartbeat => Body::Heartbeat { next_report: c.u64()? },
        Kind::Frame => {
            let v = c.phasor()?;
            let n = c.u16()?;
            let mut lines = BTreeMap::new();
            for _ in 0..n {
                let id = LineId(c.u32()?);
                if lines.insert(id, c.phasor()?).is_some() {
                    return Err(CodecError::Payload {
                        kind: "frame",
                        reason: format!("line {id} repeated"),
                    });
                }
            }
            Body::Frame { v, lines }
        }
        Kind::Report => {
            let text = std::str::from_utf8(c.take(buf.len())?).map_err(|e| CodecError::Payload {
                kind: "report",
                reason: e.to_string(),
            })?;
            let r: AnomalyReport = serde_json::from_str(text).map_err(|e| CodecError::Payload {
                kind: "report",
                reason: e.to_string(),
            })?;
            Body::Report(Box::new(r))
        }
        Kind::Bye => Body::Bye,
    };
    c.finish()?;
    Ok(body)
}

/// Decode the first message in `buf`, returning it and the bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), CodecError> {
    if buf.len() < 4 {
        return Err(CodecError::Truncated {
            needed: 4,
            available: buf.len(),
        });
    }
    let len = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
    if len < (HEADER_LEN + CRC_LEN) as u32 || len > MAX_MESSAGE {
        return Err(CodecError::Length(len));
    }
    let total = 4 + len as usize;
    if buf.len() < total {
        return Err(CodecError::Truncated {
            needed: total,
            available: buf.len(),
        });
    }
    let msg = &buf[4..total - CRC_LEN];
    let expected = u32::from_le_bytes(buf[total - CRC_LEN..total].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(msg);
    if expected != actual {
        return Err(CodecError::Checksum { expected, actual });
    }
    if msg[0] != VERSION {
        return Err(CodecError::Version(msg[0]));
    }
    let kind = Kind::from_u8(msg[1])?;
    let sensor = BusId(u32::from_le_bytes(msg[2..6].try_into().expect("4 bytes")));
    let k = u64::from_le_bytes(msg[6..14].try_into().expect("8 bytes"));
    let body = parse_body(kind, &msg[HEADER_LEN..])?;
    Ok((Message { sensor, k, body }, total))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMessage {
    version: u8,
    kind: Kind,
    sensor: BusId,
    k: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_report: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<[[f64; 2]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lines: Option<Vec<(LineId, [[f64; 2]; 3])>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<AnomalyReport>,
}

fn to_pairs(p: &Phasor3) -> [[f64; 2]; 3] {
    p.map(|z| [z.re, z.im])
}

fn from_pairs(p: [[f64; 2]; 3]) -> Phasor3 {
    p.map(|[re, im]| Complex64::new(re, im))
}

/// JSON debug form of a message, without trailing newline.
pub fn encode_json(m: &Message) -> String {
    let mut j = JsonMessage {
        version: VERSION,
        kind: m.kind(),
        sensor: m.sensor,
        k: m.k,
        next_report: None,
        v: None,
        lines: None,
        report: None,
    };
    match &m.body {
        Body::Hello { next_report } | Body::Heartbeat { next_report } => j.next_report = Some(*next_report),
        Body::Frame { v, lines } => {
            j.v = Some(to_pairs(v));
            j.lines = Some(lines.iter().map(|(id, i)| (*id, to_pairs(i))).collect());
        }
        Body::Report(r) => j.report = Some((**r).clone()),
        Body::Bye => {}
    }
    serde_json::to_string(&j).expect("message serializes")
}

pub fn decode_json(line: &str) -> Result<Message, CodecError> {
    let j: JsonMessage = serde_json::from_str(line).map_err(|e| CodecError::Json(e.to_string()))?;
    if j.version != VERSION {
        return Err(CodecError::Version(j.version));
    }
    let missing = |what: &str| CodecError::Json(format!("{} message without `{what}`", j.kind.name()));
    let body = match j.kind {
        Kind::Hello => Body::Hello {
            next_report: j.next_report.ok_or_else(|| missing("next_report"))?,
        },
        Kind::Heartbeat => Body::Heartbeat {
            next_report: j.next_report.ok_or_else(|| missing("next_report"))?,
        },
        Kind::Frame => Body::Frame {
            v: from_pairs(j.v.ok_or_else(|| missing("v"))?),
            lines: j
                .lines
                .ok_or_else(|| missing("lines"))?
                .into_iter()
                .map(|(id, i)| (id, from_pairs(i)))
                .collect(),
        },
        Kind::Report => Body::Report(Box::new(j.report.ok_or_else(|| missing("report"))?)),
        Kind::Bye => Body::Bye,
    };
    Ok(Message {
        sensor: j.sensor,
        k: j.k,
        body,
    })
}

pub fn write_message(w: &mut impl Write, m: &Message, codec: Codec) -> std::io::Result<()> {
    match codec {
        Codec::Binary => w.write_all(&encode(m)),
        Codec::Json => {
            w.write_all(encode_json(m).as_bytes())?;
            w.write_all(b"\n")
        }
    }
}

/// Read one message; `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl BufRead, codec: Codec) -> Result<Option<Message>, CodecError> {
    let io = |e: std::io::Error| CodecError::Io(e.to_string());
    match codec {
        Codec::Binary => {
            let mut len = [0u8; 4];
            let mut got = 0;
            while got < 4 {
                let n = r.read(&mut len[got..]).map_err(io)?;
                if n == 0 {
                    return if got == 0 {
                        Ok(None)
                    } else {
                        Err(CodecError::Truncated {
                            needed: 4,
                            available: got,
                        })
                    };
                }
                got += n;
            }
            let n = u32::from_le_bytes(len);
            if n < (HEADER_LEN + CRC_LEN) as u32 || n > MAX_MESSAGE {
                return Err(CodecError::Length(n));
            }
            let mut buf = vec![0u8; 4 + n as usize];
            buf[..4].copy_from_slice(&len);
            r.read_exact(&mut buf[4..]).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => CodecError::Truncated {
                    needed: buf.len(),
                    available: 4,
                },
                _ => io(e),
            })?;
            decode(&buf).map(|(m, _)| Some(m))
        }
        Codec::Json => {
            let mut line = String::new();
            loop {
                line.clear();
                if r.read_line(&mut line).map_err(io)? == 0 {
                    return Ok(None);
                }
                if !line.trim().is_empty() {
                    return decode_json(line.trim_end()).map(Some);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{EventEnd, Label, Rule};
    use crate::phasor::balanced;
    use crate::time::default_epoch;

    fn frame_msg() -> Message {
        Message::frame(&PhasorFrame {
            k: 77,
            bus: BusId(19),
            v: balanced(1.0 / 3.0, 0.123456789),
            i_lines: BTreeMap::from([(LineId(3), balanced(0.1, 1e-300)), (LineId(4), balanced(f64::MIN_POSITIVE, -2.0))]),
        })
    }

    fn report_msg() -> Message {
        let r = AnomalyReport::new(Rule::CurrentMag, Label::Drop, Some(BusId(19)), Some(LineId(3)), 10, EventEnd::Persistent, 0.25, default_epoch());
        Message {
            sensor: BusId(19),
            k: 4,
            body: Body::Report(Box::new(r)),
        }
    }

    fn all() -> Vec<Message> {
        vec![
            frame_msg(),
            report_msg(),
            Message {
                sensor: BusId(1),
                k: 0,
                body: Body::Hello { next_report: 9 },
            },
            Message {
                sensor: BusId(1),
                k: 5,
                body: Body::Heartbeat { next_report: 2 },
            },
            Message {
                sensor: BusId(1),
                k: 1200,
                body: Body::Bye,
            },
        ]
    }

    #[test]
    fn binary_round_trip() {
        for m in all() {
            let bytes = encode(&m);
            let (back, used) = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(used, bytes.len());
        }
    }

    #[test]
    fn json_round_trip() {
        for m in all() {
            assert_eq!(decode_json(&encode_json(&m)).unwrap(), m);
        }
    }

    #[test]
    fn stream_of_messages() {
        for codec in [Codec::Binary, Codec::Json] {
            let mut buf = Vec::new();
            for m in all() {
                write_message(&mut buf, &m, codec).unwrap();
            }
            let mut r = std::io::BufReader::new(buf.as_slice());
            let mut back = Vec::new();
            while let Some(m) = read_message(&mut r, codec).unwrap() {
                back.push(m);
            }
            assert_eq!(back, all());
        }
    }

    #[test]
    fn typed_errors() {
        let bytes = encode(&frame_msg());
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(decode(&bad), Err(CodecError::Checksum { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        let crc = crc32fast::hash(&v2[4..v2.len() - 4]);
        let n = v2.len();
        v2[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&v2).unwrap_err(), CodecError::Version(2));
        assert!(matches!(decode(&[0xff, 0xff, 0xff, 0xff]), Err(CodecError::Length(_))));
    }
}
