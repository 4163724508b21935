//! Paced frame source over a sensor CSV file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::time::{Duration, Instant};

use crate::analytics::PhasorFrame;
use crate::model::BusId;
use crate::synth::{bus_from_file_name, check_header, parse_row};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Iterator of frames from CSV rows. Malformed rows, rows that disagree
/// with the voltage of their sample and rows going back in time are
/// skipped and counted.
pub struct CsvReplay<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    bus: BusId,
    pending: Option<PhasorFrame>,
    row: usize,
    skipped: u64,
    interval: Option<Duration>,
    start: Option<(Instant, u64)>,
}

impl<R: Read> CsvReplay<R> {
    /// `rate` is a multiple of real time; 0 replays as fast as possible.
    pub fn new(bus: BusId, reader: R, rate: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        check_header(rdr.headers()?)?;
        let interval = (rate > 0.0).then(|| Duration::from_secs_f64(1.0 / (SAMPLE_RATE_HZ * rate)));
        Ok(CsvReplay {
            records: rdr.into_records(),
            bus,
            pending: None,
            row: 1,
            skipped: 0,
            interval,
            start: None,
        })
    }

    pub fn skipped_rows(&self) -> u64 {
        self.skipped
    }

    fn pace(&mut self, k: u64) {
        let Some(dt) = self.interval else { return };
        let (t0, k0) = *self.start.get_or_insert((Instant::now(), k));
        let due = t0 + dt * (k.saturating_sub(k0)) as u32;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }

    fn next_frame(&mut self) -> Option<PhasorFrame> {
        loop {
            let Some(rec) = self.records.next() else {
                return self.pending.take();
            };
            self.row += 1;
            let Ok((k, v, line, i)) = rec.map_err(Error::from).and_then(|r| parse_row(&r, self.row)) else {
                self.skipped += 1;
                continue;
            };
            match &mut self.pending {
                Some(p) if p.k == k => {
                    if p.v == v && !p.i_lines.contains_key(&line) {
                        p.i_lines.insert(line, i);
                    } else {
                        self.skipped += 1;
                    }
                }
                Some(p) if k < p.k => self.skipped += 1,
                _ => {
                    let frame = PhasorFrame {
                        k,
                        bus: self.bus,
                        v,
                        i_lines: BTreeMap::from([(line, i)]),
                    };
                    if let Some(done) = self.pending.replace(frame) {
                        return Some(done);
                    }
                }
            }
        }
    }
}

impl<R: Read> Iterator for CsvReplay<R> {
    type Item = PhasorFrame;

    fn next(&mut self) -> Option<PhasorFrame> {
        let f = self.next_frame()?;
        self.pace(f.k);
        Some(f)
    }
}

/// Replay `sensor_<bus>.csv` at `rate` times real time (0 = no pacing).
pub fn replay_csv(path: impl AsRef<Path>, rate: f64) -> Result<CsvReplay<BufReader<File>>> {
    let path = path.as_ref();
    let bus = bus_from_file_name(path)?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    CsvReplay::new(bus, BufReader::new(f), rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_csv, SensorStream, HEADER};
    use crate::time::default_epoch;
    use crate::transport::SessionState;

    fn csv_text() -> String {
        let row = |k: u64, line: u32| format!("{k},t,1,0,-0.5,-0.8,-0.5,0.8,{line},0.1,0,0,0.1,0,0");
        [
            HEADER.join(","),
            row(0, 1),
            row(0, 2),
            "garbage".into(),
            row(1, 1),
            row(3, 1),
            row(2, 1),
            row(4, 1),
        ]
        .join("\n")
    }

    #[test]
    fn malformed_rows_skipped_and_counted() {
        let text = csv_text();
        let mut r = CsvReplay::new(BusId(7), text.as_bytes(), 0.0).unwrap();
        let frames: Vec<PhasorFrame> = r.by_ref().collect();
        assert_eq!(frames.iter().map(|f| f.k).collect::<Vec<_>>(), vec![0, 1, 3, 4]);
        assert_eq!(frames[0].i_lines.len(), 2);
        assert_eq!(r.skipped_rows(), 2);
    }

    #[test]
    fn gap_in_k_surfaces_in_session() {
        let frames: Vec<PhasorFrame> = CsvReplay::new(BusId(7), csv_text().as_bytes(), 0.0).unwrap().collect();
        let mut s = SessionState::new(&[BusId(7)]);
        for f in &frames {
            s.observe_frame(f.bus, f.k);
        }
        assert_eq!(s.get(BusId(7)).unwrap().gaps, 1);
    }

    #[test]
    fn synth_csv_round_trip() {
        let frames: Vec<PhasorFrame> = CsvReplay::new(BusId(7), csv_text().as_bytes(), 0.0).unwrap().collect();
        let stream = SensorStream { bus: BusId(7), frames };
        let mut buf = Vec::new();
        write_csv(&stream, default_epoch(), &mut buf).unwrap();
        let back: Vec<PhasorFrame> = CsvReplay::new(BusId(7), buf.as_slice(), 0.0).unwrap().collect();
        assert_eq!(back, stream.frames);
    }

    #[test]
    fn paced_replay_takes_real_time() {
        let t = Instant::now();
        let n = CsvReplay::new(BusId(7), csv_text().as_bytes(), 4.0).unwrap().count();
        assert_eq!(n, 4);
        assert!(t.elapsed() >= Duration::from_secs_f64(4.0 / 480.0));
    }
}
