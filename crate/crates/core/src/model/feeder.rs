//! Feeder description and its JSON file format.
//!
//! A feeder file is UTF-8 JSON:
//!
//! ```json
//! {
//!   "name": "toy",
//!   "base_mva": 1.0,
//!   "slack": 1,
//!   "buses": [ { "id": 1, "kv_base": 24.9, "type": "slack" }, ... ],
//!   "lines": [ { "from": 1, "to": 2, "phases": "abc",
//!                "series": [[re, im], ... 9 entries row-major ...],
//!                "shunt":  [[re, im], ... 9 entries ...],
//!                "rating_amps": 230.0 }, ... ]
//! }
//! ```
//!
//! `series` and `shunt` are in siemens for the whole segment (total shunt,
//! half of it lumped at each end). Lines with `"per_unit": true` carry
//! admittances already on the system base; regulators and transformers
//! use that form because their two ends may sit on different voltage
//! bases. Line ids default to the position in `lines`.
//!
//! Everything is converted to per-unit on load.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::phasor::Complex64;
use crate::{Error, Result};

/// 3x3 complex phase-domain block.
pub type Block = Matrix3<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Which of phases a, b, c exist on an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseMask([bool; 3]);

impl PhaseMask {
    pub const ABC: PhaseMask = PhaseMask([true; 3]);

    pub fn new(present: [bool; 3]) -> Option<Self> {
        present.iter().any(|&p| p).then_some(PhaseMask(present))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut present = [false; 3];
        let mut last = None;
        for ch in s.chars() {
            let p = match ch.to_ascii_lowercase() {
                'a' => 0,
                'b' => 1,
                'c' => 2,
                _ => return None,
            };
            // phases must be listed once, in order
            if last.is_some_and(|l| l >= p) {
                return None;
            }
            last = Some(p);
            present[p] = true;
        }
        Self::new(present)
    }

    pub fn has(&self, phase: usize) -> bool {
        self.0[phase]
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&p| p)
    }

    pub fn phases(&self) -> impl Iterator<Item = usize> + '_ {
        (0..3).filter(|&p| self.0[p])
    }

    pub fn as_array(&self) -> [bool; 3] {
        self.0
    }

    pub fn union(self, other: PhaseMask) -> PhaseMask {
        PhaseMask([
            self.0[0] || other.0[0],
            self.0[1] || other.0[1],
            self.0[2] || other.0[2],
        ])
    }

    /// Zero every row and column of `m` that belongs to an absent phase.
    pub fn apply(&self, m: &Block) -> Block {
        let mut out = *m;
        for p in 0..3 {
            if !self.0[p] {
                for q in 0..3 {
                    out[(p, q)] = Complex64::new(0.0, 0.0);
                    out[(q, p)] = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }
}

impl fmt::Display for PhaseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (p, name) in ['a', 'b', 'c'].iter().enumerate() {
            if self.0[p] {
                write!(f, "{name}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    /// Line-to-line voltage base, kV.
    pub kv_base: f64,
    pub kind: BusKind,
}

/// Three-phase pi-model segment, per-unit on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub series_admittance: Block,
    /// Total shunt admittance; half is lumped at each end.
    pub shunt_admittance: Block,
    /// Per-phase rated current magnitude, p.u.; zero on absent phases.
    pub rated_current: [f64; 3],
    pub phases: PhaseMask,
}

impl LineSegment {
    pub fn other_end(&self, bus: BusId) -> Option<BusId> {
        if bus == self.from_bus {
            Some(self.to_bus)
        } else if bus == self.to_bus {
            Some(self.from_bus)
        } else {
            None
        }
    }

    pub fn touches(&self, bus: BusId) -> bool {
        self.from_bus == bus || self.to_bus == bus
    }
}

#[derive(Debug, Clone)]
pub struct FeederModel {
    pub name: String,
    /// Three-phase power base, MVA.
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<LineSegment>,
    pub slack: BusId,
    bus_index: HashMap<BusId, usize>,
    line_index: HashMap<LineId, usize>,
}

impl FeederModel {
    /// Validate and index a feeder assembled in memory.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<LineSegment>,
        slack: BusId,
    ) -> Result<Self> {
        let mut feeder = FeederModel {
            name: name.into(),
            base_mva,
            buses,
            lines,
            slack,
            bus_index: HashMap::new(),
            line_index: HashMap::new(),
        };
        feeder.reindex()?;
        feeder.validate()?;
        Ok(feeder)
    }

    fn reindex(&mut self) -> Result<()> {
        self.bus_index.clear();
        self.line_index.clear();
        for (i, b) in self.buses.iter().enumerate() {
            if self.bus_index.insert(b.id, i).is_some() {
                return Err(Error::Feeder(format!("duplicate bus id {}", b.id)));
            }
        }
        for (i, l) in self.lines.iter().enumerate() {
            if self.line_index.insert(l.id, i).is_some() {
                return Err(Error::Feeder(format!("duplicate line id {}", l.id)));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(Error::Feeder(format!("base_mva must be positive, got {}", self.base_mva)));
        }
        if self.buses.is_empty() {
            return Err(Error::Feeder("feeder has no buses".into()));
        }
        for b in &self.buses {
            if !(b.kv_base > 0.0 && b.kv_base.is_finite()) {
                return Err(Error::Feeder(format!("bus {} has invalid kv_base {}", b.id, b.kv_base)));
            }
        }
        let slacks: Vec<_> = self.buses.iter().filter(|b| b.kind == BusKind::Slack).collect();
        if slacks.len() != 1 || slacks[0].id != self.slack {
            return Err(Error::Feeder(format!(
                "exactly one slack bus required and it must be bus {}",
                self.slack
            )));
        }
        let mut pairs = BTreeSet::new();
        for l in &self.lines {
            for bus in [l.from_bus, l.to_bus] {
                if !self.bus_index.contains_key(&bus) {
                    return Err(Error::UnknownBus { line: l.id, bus });
                }
            }
            if l.from_bus == l.to_bus {
                return Err(Error::Feeder(format!("line {} is a self loop on bus {}", l.id, l.from_bus)));
            }
            let key = (l.from_bus.min(l.to_bus), l.from_bus.max(l.to_bus));
            if !pairs.insert(key) {
                return Err(Error::Feeder(format!(
                    "line {} duplicates the connection {}-{}",
                    l.id, key.0, key.1
                )));
            }
            for p in 0..3 {
                let r = l.rated_current[p];
                if l.phases.has(p) && !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Feeder(format!("line {} has non-positive rating on phase {p}", l.id)));
                }
            }
            for m in [&l.series_admittance, &l.shunt_admittance] {
                if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(Error::Feeder(format!("line {} has non-finite admittance", l.id)));
                }
                let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
                if (m - m.transpose()).iter().any(|c| c.norm() > 1e-9 * scale) {
                    return Err(Error::Feeder(format!("line {} admittance is not symmetric", l.id)));
                }
            }
        }
        // connectivity from the slack bus
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.bus_index[&self.slack]] = true;
        let adjacency = self.adjacency();
        while let Some(b) = queue.pop_front() {
            for &(n, _) in &adjacency[self.bus_index[&b]] {
                let i = self.bus_index[&n];
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Feeder(format!(
                "graph is disconnected: bus {} is unreachable from the slack bus",
                self.buses[i].id
            )));
        }
        Ok(())
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn line(&self, id: LineId) -> Option<&LineSegment> {
        self.line_index.get(&id).map(|&i| &self.lines[i])
    }

    /// Per-bus list of `(neighbour, line)` pairs, indexed like `buses`.
    pub fn adjacency(&self) -> Vec<Vec<(BusId, LineId)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            adj[self.bus_index[&l.from_bus]].push((l.to_bus, l.id));
            adj[self.bus_index[&l.to_bus]].push((l.from_bus, l.id));
        }
        adj
    }

    pub fn incident_lines(&self, bus: BusId) -> Vec<LineId> {
        self.lines.iter().filter(|l| l.touches(bus)).map(|l| l.id).collect()
    }

    /// Phases present at a bus: the union over its incident lines.
    pub fn bus_phases(&self, bus: BusId) -> PhaseMask {
        self.lines
            .iter()
            .filter(|l| l.touches(bus))
            .map(|l| l.phases)
            .reduce(PhaseMask::union)
            .unwrap_or(PhaseMask::ABC)
    }

    pub fn slack_kv(&self) -> f64 {
        self.bus(self.slack).map(|b| b.kv_base).unwrap_or(1.0)
    }

    /// Hop distance between buses, for placement reports.
    pub fn hop_distance(&self, from: BusId, to: BusId) -> Option<usize> {
        let adjacency = self.adjacency();
        let mut dist = vec![usize::MAX; self.buses.len()];
        let start = self.bus_index(from)?;
        let goal = self.bus_index(to)?;
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            if i == goal {
                return Some(dist[i]);
            }
            for &(n, _) in &adjacency[i] {
                let j = self.bus_index[&n];
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        None
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FeederFile = serde_json::from_str(text)?;
        file.into_model()
    }

    /// Serialize back to the file schema (admittances written per-unit).
    pub fn to_json(&self) -> Result<String> {
        let file = FeederFile {
            name: self.name.clone(),
            base_mva: self.base_mva,
            slack: self.slack,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    name: Some(b.name.clone()),
                    kv_base: b.kv_base,
                    kind: b.kind,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| {
                    let kv = self.bus(l.from_bus).map(|b| b.kv_base).unwrap_or(1.0);
                    let amps = l.phases.phases().map(|p| l.rated_current[p]).fold(0.0, f64::max)
                        * self.current_base_amps(kv);
                    LineRecord {
                        id: Some(l.id),
                        from: l.from_bus,
                        to: l.to_bus,
                        phases: l.phases.to_string(),
                        series: block_to_pairs(&l.series_admittance),
                        shunt: block_to_pairs(&l.shunt_admittance),
                        rating_amps: amps,
                        per_unit: true,
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Current base in amperes for a bus of the given voltage base.
    pub fn current_base_amps(&self, kv: f64) -> f64 {
        1000.0 * self.base_mva / (3f64.sqrt() * kv)
    }

    pub fn impedance_base_ohm(&self, kv: f64) -> f64 {
        kv * kv / self.base_mva
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederFile {
    #[serde(default)]
    name: String,
    base_mva: f64,
    slack: BusId,
    buses: Vec<BusRecord>,
    lines: Vec<LineRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    id: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    kv_base: f64,
    #[serde(rename = "type")]
    kind: BusKind,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<LineId>,
    from: BusId,
    to: BusId,
    phases: String,
    series: Vec<[f64; 2]>,
    shunt: Vec<[f64; 2]>,
    rating_amps: f64,
    #[serde(default)]
    per_unit: bool,
}

fn pairs_to_block(pairs: &[[f64; 2]], what: &str, line: LineId) -> Result<Block> {
    if pairs.len() != 9 {
        return Err(Error::Feeder(format!(
            "line {line}: {what} must have 9 [re, im] entries, found {}",
            pairs.len()
        )));
    }
    Ok(Block::from_fn(|r, c| {
        let [re, im] = pairs[3 * r + c];
        Complex64::new(re, im)
    }))
}

fn block_to_pairs(m: &Block) -> Vec<[f64; 2]> {
    (0..9).map(|i| [m[(i / 3, i % 3)].re, m[(i / 3, i % 3)].im]).collect()
}

impl FeederFile {
    fn into_model(self) -> Result<FeederModel> {
        let buses: Vec<Bus> = self
            .buses
            .into_iter()
            .map(|b| Bus {
                name: b.name.unwrap_or_else(|| b.id.to_string()),
                id: b.id,
                kv_base: b.kv_base,
                kind: b.kind,
            })
            .collect();
        let kv: HashMap<BusId, f64> = buses.iter().map(|b| (b.id, b.kv_base)).collect();
        let base_mva = self.base_mva;
        let mut lines = Vec::with_capacity(self.lines.len());
        for (i, rec) in self.lines.into_iter().enumerate() {
            let id = rec.id.unwrap_or(LineId(i as u32));
            let phases = PhaseMask::parse(&rec.phases)
                .ok_or_else(|| Error::Feeder(format!("line {id}: bad phase string {:?}", rec.phases)))?;
            let kv_from = *kv.get(&rec.from).ok_or(Error::UnknownBus { line: id, bus: rec.from })?;
            let kv_to = *kv.get(&rec.to).ok_or(Error::UnknownBus { line: id, bus: rec.to })?;
            let mut series = pairs_to_block(&rec.series, "series", id)?;
            let mut shunt = pairs_to_block(&rec.shunt, "shunt", id)?;
            if !rec.per_unit {
                if (kv_from - kv_to).abs() > 1e-9 * kv_from {
                    return Err(Error::Feeder(format!(
                        "line {id} joins different voltage bases; give it per_unit admittances"
                    )));
                }
                let z_base = kv_from * kv_from / base_mva;
                series *= Complex64::new(z_base, 0.0);
                shunt *= Complex64::new(z_base, 0.0);
            }
            if !(rec.rating_amps > 0.0 && rec.rating_amps.is_finite()) {
                return Err(Error::Feeder(format!("line {id} has non-positive rating")));
            }
            let i_base = 1000.0 * base_mva / (3f64.sqrt() * kv_from);
            let mut rated = [0.0; 3];
            for p in phases.phases() {
                rated[p] = rec.rating_amps / i_base;
            }
            lines.push(LineSegment {
                id,
                from_bus: rec.from,
                to_bus: rec.to,
                series_admittance: phases.apply(&series),
                shunt_admittance: phases.apply(&shunt),
                rated_current: rated,
                phases,
            });
        }
        FeederModel::new(self.name, base_mva, buses, lines, self.slack)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two buses joined by one three-phase line.
    pub(crate) fn two_bus_json() -> String {
        r#"{
          "name": "two-bus",
          "base_mva": 1.0,
          "slack": 1,
          "buses": [
            {"id": 1, "kv_base": 1.0, "type": "slack"},
            {"id": 2, "kv_base": 1.0, "type": "pq"}
          ],
          "lines": [
            {"from": 1, "to": 2, "phases": "abc",
             "series": [[2,-4],[0.5,-1],[0.4,-0.8],[0.5,-1],[2,-4],[0.3,-0.7],[0.4,-0.8],[0.3,-0.7],[2,-4]],
             "shunt": [[0,0.01],[0,0],[0,0],[0,0],[0,0.01],[0,0],[0,0],[0,0],[0,0.01]],
             "rating_amps": 400}
          ]
        }"#
        .to_string()
    }

    #[test]
    fn phase_mask_parse() {
        assert_eq!(PhaseMask::parse("abc"), Some(PhaseMask::ABC));
        assert_eq!(PhaseMask::parse("b").unwrap().as_array(), [false, true, false]);
        assert_eq!(PhaseMask::parse("ac").unwrap().to_string(), "ac");
        assert!(PhaseMask::parse("").is_none());
        assert!(PhaseMask::parse("ba").is_none());
        assert!(PhaseMask::parse("aa").is_none());
        assert!(PhaseMask::parse("x").is_none());
    }

    #[test]
    fn minimal_two_bus_file() {
        let f = FeederModel::from_json(&two_bus_json()).unwrap();
        assert_eq!(f.bus_count(), 2);
        assert_eq!(f.lines.len(), 1);
        assert_eq!(f.lines[0].id, LineId(0));
        // 1 kV / 1 MVA: impedance base 1 ohm, current base 577.35 A
        assert!((f.lines[0].series_admittance[(0, 0)] - Complex64::new(2.0, -4.0)).norm() < 1e-12);
        assert!((f.lines[0].rated_current[0] - 400.0 / 577.350_269_189_625_7).abs() < 1e-12);
    }

    #[test]
    fn unknown_bus_is_named() {
        let text = two_bus_json().replace(r#""to": 2"#, r#""to": 99"#);
        let err = FeederModel::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::UnknownBus { bus: BusId(99), line: LineId(0) }), "{err}");
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let text = two_bus_json().replace(
            r#"{"id": 2, "kv_base": 1.0, "type": "pq"}"#,
            r#"{"id": 2, "kv_base": 1.0, "type": "pq"}, {"id": 3, "kv_base": 1.0, "type": "pq"}"#,
        );
        let err = FeederModel::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("bus 3"), "{err}");
    }

    #[test]
    fn duplicate_line_rejected() {
        let json = two_bus_json();
        let start = json.find(r#"{"from""#).unwrap();
        let end = json.rfind('}').unwrap();
        let line_end = json[..end].rfind(']').unwrap();
        let line = json[start..line_end].trim().trim_end_matches(',').to_string();
        let line = line.replace(r#""from": 1, "to": 2"#, r#""from": 2, "to": 1"#);
        let text = format!("{}, {}\n]}}", json[..line_end].trim_end(), line);
        let err = FeederModel::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("duplicates"), "{err}");
    }

    #[test]
    fn absent_phase_entries_are_zeroed() {
        let text = two_bus_json().replace(r#""phases": "abc""#, r#""phases": "b""#);
        let f = FeederModel::from_json(&text).unwrap();
        let y = f.lines[0].series_admittance;
        for p in 0..3 {
            for q in 0..3 {
                let expect_zero = p != 1 || q != 1;
                assert_eq!(y[(p, q)].norm() == 0.0, expect_zero, "entry {p},{q}");
            }
        }
        assert_eq!(f.lines[0].rated_current[0], 0.0);
        assert_eq!(f.bus_phases(BusId(2)).as_array(), [false, true, false]);
    }

    #[test]
    fn json_round_trip_preserves_admittance() {
        let f = FeederModel::from_json(&two_bus_json()).unwrap();
        let g = FeederModel::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f.lines[0].series_admittance, g.lines[0].series_admittance);
        assert!((f.lines[0].rated_current[1] - g.lines[0].rated_current[1]).abs() < 1e-12);
    }
}
