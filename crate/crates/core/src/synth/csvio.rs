//! Sensor CSV files: one row per sample and incident line.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use super::generate::{Generated, SensorStream};
use crate::analytics::PhasorFrame;
use crate::model::{BusId, LineId};
use crate::phasor::{Complex64, Phasor3};
use crate::time::iso_time;
use crate::{Error, Result};

pub const HEADER: [&str; 15] = [
    "k", "iso_time", "v_a_re", "v_a_im", "v_b_re", "v_b_im", "v_c_re", "v_c_im", "line_id", "i_a_re", "i_a_im",
    "i_b_re", "i_b_im", "i_c_re", "i_c_im",
];

pub fn write_csv(stream: &SensorStream, epoch: DateTime<Utc>, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for f in &stream.frames {
        let time = iso_time(epoch, f.k);
        for (id, i) in &f.i_lines {
            let mut rec = vec![f.k.to_string(), time.clone()];
            rec.extend(f.v.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]));
            rec.push(id.0.to_string());
            rec.extend(i.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]));
            out.write_record(&rec)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Scenario(format!("csv row {row}: bad or missing `{}`", HEADER[idx])))
}

fn phasor(rec: &csv::StringRecord, first: usize, row: usize) -> Result<Phasor3> {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for (p, z) in out.iter_mut().enumerate() {
        *z = Complex64::new(field(rec, first + 2 * p, row)?, field(rec, first + 2 * p + 1, row)?);
    }
    Ok(out)
}

/// Fields of one CSV row: sample, bus voltage, line and line current.
pub fn parse_row(rec: &csv::StringRecord, row: usize) -> Result<(u64, Phasor3, LineId, Phasor3)> {
    if rec.len() != HEADER.len() {
        return Err(Error::Scenario(format!("csv row {row}: expected {} fields, got {}", HEADER.len(), rec.len())));
    }
    Ok((field(rec, 0, row)?, phasor(rec, 2, row)?, LineId(field(rec, 8, row)?), phasor(rec, 9, row)?))
}

pub fn check_header(header: &csv::StringRecord) -> Result<()> {
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::Scenario(format!("unexpected csv header {:?}", header.iter().collect::<Vec<_>>())));
    }
    Ok(())
}

/// Read frames of sensor `bus`. Rows of one sample must be contiguous and
/// agree on the voltage.
pub fn read_csv(bus: BusId, r: impl Read) -> Result<Vec<PhasorFrame>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?)?;
    let mut frames: Vec<PhasorFrame> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let (k, v, line, i) = parse_row(&rec?, row + 2)?;
        match frames.last_mut() {
            Some(f) if f.k == k => {
                if f.v != v {
                    return Err(Error::Scenario(format!("csv row {}: voltage differs within sample {k}", row + 2)));
                }
                f.i_lines.insert(line, i);
            }
            _ => frames.push(PhasorFrame {
                k,
                bus,
                v,
                i_lines: BTreeMap::from([(line, i)]),
            }),
        }
    }
    Ok(frames)
}

pub fn sensor_file(dir: &Path, bus: BusId, uplink: bool) -> PathBuf {
    if uplink {
        dir.join(format!("sensor_{}_uplink.csv", bus.0))
    } else {
        dir.join(format!("sensor_{}.csv", bus.0))
    }
}

pub const TRUTH_FILE: &str = "groundtruth.json";

/// Write `sensor_<bus>.csv` per sensor, `sensor_<bus>_uplink.csv` where the
/// uplink was tampered with, and `groundtruth.json`.
pub fn write_outputs(dir: &Path, g: &Generated) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let epoch = crate::time::parse_epoch(&g.truth.epoch)
        .ok_or_else(|| Error::Scenario(format!("bad epoch {:?}", g.truth.epoch)))?;
    let mut written = Vec::new();
    for (clean, up) in g.clean.iter().zip(&g.uplink) {
        let path = sensor_file(dir, clean.bus, false);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_csv(clean, epoch, std::io::BufWriter::new(file))?;
        written.push(path);
        if clean != up {
            let path = sensor_file(dir, up.bus, true);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_csv(up, epoch, std::io::BufWriter::new(file))?;
            written.push(path);
        }
    }
    let path = dir.join(TRUTH_FILE);
    std::fs::write(&path, g.truth.to_json()).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Streams found in a directory written by [`write_outputs`], as
/// `(measured, uplink)` per sensor.
pub fn read_dir_streams(dir: &Path, sensors: &[BusId]) -> Result<Vec<(SensorStream, SensorStream)>> {
    let open = |p: &Path| -> Result<Vec<PhasorFrame>> {
        let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
        read_csv_from(p, f)
    };
    let mut out = Vec::new();
    for &bus in sensors {
        let clean = SensorStream {
            bus,
            frames: open(&sensor_file(dir, bus, false))?,
        };
        let up_path = sensor_file(dir, bus, true);
        let uplink = if up_path.exists() {
            SensorStream {
                bus,
                frames: open(&up_path)?,
            }
        } else {
            clean.clone()
        };
        out.push((clean, uplink));
    }
    Ok(out)
}

/// Bus id from a `sensor_<bus>[_uplink].csv` file name.
pub fn bus_from_file_name(path: &Path) -> Result<BusId> {
    path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("sensor_"))
        .and_then(|s| s.trim_end_matches("_uplink").parse().ok())
        .map(BusId)
        .ok_or_else(|| Error::Scenario(format!("{} is not named sensor_<bus>.csv", path.display())))
}

fn read_csv_from(path: &Path, f: std::fs::File) -> Result<Vec<PhasorFrame>> {
    let bus = bus_from_file_name(path)?;
    read_csv(bus, std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::balanced;
    use crate::time::default_epoch;

    fn stream() -> SensorStream {
        let frames = (0..5)
            .map(|k| PhasorFrame {
                k,
                bus: BusId(7),
                v: balanced(1.0 + 1e-3 * k as f64, 0.1),
                i_lines: BTreeMap::from([
                    (LineId(5), balanced(0.1, -0.3)),
                    (LineId(6), balanced(0.2 / 3.0, 2.0)),
                ]),
            })
            .collect();
        SensorStream { bus: BusId(7), frames }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = stream();
        let mut buf = Vec::new();
        write_csv(&s, default_epoch(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,iso_time,v_a_re"));
        assert_eq!(text.lines().count(), 11);
        let back = read_csv(BusId(7), buf.as_slice()).unwrap();
        assert_eq!(back, s.frames);
    }

    #[test]
    fn rejects_inconsistent_voltage() {
        let text = format!(
            "{}\n0,t,1,0,1,0,1,0,1,0,0,0,0,0,0\n0,t,2,0,1,0,1,0,2,0,0,0,0,0,0\n",
            HEADER.join(",")
        );
        assert!(read_csv(BusId(1), text.as_bytes()).is_err());
    }
}
