//! Bus admittance matrix, the constraint matrix `H = [I | -Y]` and its
//! partition by sensor placement.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BusId, FeederModel};
use crate::phasor::{Complex64, Phasor3};
use crate::{Error, Result};

/// Scaling of the quantities that enter `H`.
///
/// `PerUnit` uses the per-unit admittance directly. `Physical` expresses
/// every bus in kV, kA and siemens at its own voltage level, so a
/// transformer becomes an ideal-ratio element. `Referred` does the same
/// with every bus taken to the slack bus voltage level. All three are a
/// diagonal rescaling of the same equations: they change the placement
/// objective but not whether `H d = 0` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    #[default]
    Physical,
    Referred,
    PerUnit,
}

/// Which half of `d = (I, V)` a column of `H` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Current,
    Voltage,
}

/// Identity of one column of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnKey {
    pub quantity: Quantity,
    pub bus: BusId,
    pub phase: u8,
}

#[derive(Debug, Clone)]
pub struct SystemMatrix {
    y: DMatrix<Complex64>,
    h: DMatrix<Complex64>,
    bus_ids: Vec<BusId>,
    /// Per row of `Y`: whether that bus has the phase at all.
    present: Vec<bool>,
    units: Units,
    /// Per bus: factor from per-unit to `H` units for voltages and currents.
    v_scale: Vec<f64>,
    i_scale: Vec<f64>,
}

impl SystemMatrix {
    pub fn build(feeder: &FeederModel) -> Self {
        Self::build_with_units(feeder, Units::default())
    }

    pub fn build_with_units(feeder: &FeederModel, units: Units) -> Self {
        let b = feeder.bus_count();
        let n = 3 * b;
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        let mut present = vec![false; n];
        let half = Complex64::new(0.5, 0.0);
        for line in &feeder.lines {
            let m = feeder.bus_index(line.from_bus).expect("validated feeder");
            let k = feeder.bus_index(line.to_bus).expect("validated feeder");
            let ys = &line.series_admittance;
            let end = ys + line.shunt_admittance * half;
            for p in 0..3 {
                for q in 0..3 {
                    y[(3 * m + p, 3 * m + q)] += end[(p, q)];
                    y[(3 * k + p, 3 * k + q)] += end[(p, q)];
                    y[(3 * m + p, 3 * k + q)] -= ys[(p, q)];
                    y[(3 * k + p, 3 * m + q)] -= ys[(p, q)];
                }
            }
            for p in line.phases.phases() {
                present[3 * m + p] = true;
                present[3 * k + p] = true;
            }
        }
        let kv: Vec<f64> = match units {
            Units::PerUnit => vec![1.0; b],
            Units::Referred => vec![feeder.slack_kv(); b],
            Units::Physical => feeder.buses.iter().map(|bus| bus.kv_base).collect(),
        };
        let (v_scale, i_scale): (Vec<f64>, Vec<f64>) = match units {
            Units::PerUnit => (vec![1.0; b], vec![1.0; b]),
            _ => {
                let s3 = 3f64.sqrt();
                kv.iter().map(|&k| (k / s3, feeder.base_mva / (s3 * k))).unzip()
            }
        };
        // Y_h = D Y_pu D with D = sqrt(S) / kV per bus
        let d: Vec<f64> = match units {
            Units::PerUnit => vec![1.0; b],
            _ => kv.iter().map(|&k| feeder.base_mva.sqrt() / k).collect(),
        };
        for r in 0..n {
            for c in 0..n {
                y[(r, c)] *= d[r / 3] * d[c / 3];
            }
        }
        let mut h = DMatrix::<Complex64>::zeros(n, 2 * n);
        h.view_mut((0, 0), (n, n)).fill_with_identity();
        h.view_mut((0, n), (n, n)).copy_from(&(-&y));
        SystemMatrix {
            y,
            h,
            bus_ids: feeder.buses.iter().map(|b| b.id).collect(),
            present,
            units,
            v_scale,
            i_scale,
        }
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[BusId] {
        &self.bus_ids
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        // bus lists are short; a scan keeps the type trivially cloneable
        self.bus_ids.iter().position(|&b| b == id)
    }

    pub fn y(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn h(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn units(&self) -> Units {
        self.units
    }

    /// Row mask of phases that exist, length `3B`.
    pub fn present_rows(&self) -> &[bool] {
        &self.present
    }

    pub fn present_row_indices(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|&r| self.present[r]).collect()
    }

    /// Scale a per-unit voltage phasor of bus index `b` into `H` units.
    pub fn voltage_to_h(&self, b: usize, v: &Phasor3) -> Phasor3 {
        v.map(|c| c * self.v_scale[b])
    }

    /// Scale a per-unit current phasor of bus index `b` into `H` units.
    pub fn current_to_h(&self, b: usize, i: &Phasor3) -> Phasor3 {
        i.map(|c| c * self.i_scale[b])
    }

    /// Column index of a key in `H`.
    pub fn column(&self, key: ColumnKey) -> Option<usize> {
        let b = self.bus_index(key.bus)?;
        let offset = match key.quantity {
            Quantity::Current => 0,
            Quantity::Voltage => 3 * self.bus_count(),
        };
        Some(offset + 3 * b + key.phase as usize)
    }

    pub fn column_key(&self, col: usize) -> ColumnKey {
        let n = 3 * self.bus_count();
        let (quantity, c) = if col < n { (Quantity::Current, col) } else { (Quantity::Voltage, col - n) };
        ColumnKey {
            quantity,
            bus: self.bus_ids[c / 3],
            phase: (c % 3) as u8,
        }
    }

    /// Stack per-bus currents and voltages (per-unit) into `d = (I, V)`.
    pub fn measurement_vector(&self, currents: &[Phasor3], voltages: &[Phasor3]) -> Vec<Complex64> {
        let n = 3 * self.bus_count();
        let mut d = vec![Complex64::new(0.0, 0.0); 2 * n];
        for (b, (i, v)) in currents.iter().zip(voltages).enumerate() {
            let i = self.current_to_h(b, i);
            let v = self.voltage_to_h(b, v);
            for p in 0..3 {
                d[3 * b + p] = i[p];
                d[n + 3 * b + p] = v[p];
            }
        }
        d
    }

    pub fn partition(&self, placement: &Placement) -> Result<PartitionedSystem> {
        placement.validate(self)?;
        let sensed: BTreeSet<usize> = placement
            .buses()
            .iter()
            .map(|&b| self.bus_index(b).expect("validated"))
            .collect();
        let (mut cols_a, mut cols_u) = (Vec::new(), Vec::new());
        for col in 0..self.h.ncols() {
            let bus = (col % (3 * self.bus_count())) / 3;
            if sensed.contains(&bus) {
                cols_a.push(col);
            } else {
                cols_u.push(col);
            }
        }
        let h_u = self.h.select_columns(&cols_u);
        let h_a = self.h.select_columns(&cols_a);
        Ok(PartitionedSystem {
            placement: placement.clone(),
            h_u,
            h_a,
            map_u: cols_u.iter().map(|&c| self.column_key(c)).collect(),
            map_a: cols_a.iter().map(|&c| self.column_key(c)).collect(),
            cols_u,
            cols_a,
            present: self.present.clone(),
            scales: placement
                .buses()
                .iter()
                .map(|&b| {
                    let i = self.bus_index(b).expect("validated");
                    (self.i_scale[i], self.v_scale[i])
                })
                .collect(),
        })
    }
}

/// An ordered set of distinct sensor buses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<BusId>", into = "Vec<BusId>")]
pub struct Placement(Vec<BusId>);

impl Placement {
    /// Buses are sorted; duplicates and the empty set are rejected.
    pub fn new(buses: impl IntoIterator<Item = BusId>) -> Result<Self> {
        let mut v: Vec<BusId> = buses.into_iter().collect();
        if v.is_empty() {
            return Err(Error::Placement("at least one sensor bus is required".into()));
        }
        v.sort();
        if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Placement(format!("bus {} listed twice", w[0])));
        }
        Ok(Placement(v))
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        Self::new(ids.iter().map(|&i| BusId(i)))
    }

    pub fn buses(&self) -> &[BusId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, bus: BusId) -> bool {
        self.0.binary_search(&bus).is_ok()
    }

    pub fn validate(&self, system: &SystemMatrix) -> Result<()> {
        if self.len() > system.bus_count() {
            return Err(Error::Placement(format!(
                "{} sensors for {} buses",
                self.len(),
                system.bus_count()
            )));
        }
        match self.0.iter().find(|&&b| system.bus_index(b).is_none()) {
            Some(b) => Err(Error::Placement(format!("bus {b} is not in the feeder"))),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<BusId>> for Placement {
    type Error = Error;
    fn try_from(v: Vec<BusId>) -> Result<Self> {
        Placement::new(v)
    }
}

impl From<Placement> for Vec<BusId> {
    fn from(p: Placement) -> Self {
        p.0
    }
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// `H` split into columns for unavailable (`h_u`) and sensed (`h_a`) entries.
///
/// Both keep `H`'s column order (all currents, then all voltages).
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    pub placement: Placement,
    pub h_u: DMatrix<Complex64>,
    pub h_a: DMatrix<Complex64>,
    pub map_u: Vec<ColumnKey>,
    pub map_a: Vec<ColumnKey>,
    cols_u: Vec<usize>,
    cols_a: Vec<usize>,
    present: Vec<bool>,
    /// `(current, voltage)` scale of each sensor, in placement order.
    scales: Vec<(f64, f64)>,
}

impl PartitionedSystem {
    /// Put the columns back where they came from.
    pub fn unpartition(&self) -> DMatrix<Complex64> {
        let rows = self.h_a.nrows();
        let mut h = DMatrix::zeros(rows, self.cols_u.len() + self.cols_a.len());
        for (j, &c) in self.cols_u.iter().enumerate() {
            h.set_column(c, &self.h_u.column(j));
        }
        for (j, &c) in self.cols_a.iter().enumerate() {
            h.set_column(c, &self.h_a.column(j));
        }
        h
    }

    pub fn present_rows(&self) -> &[bool] {
        &self.present
    }

    pub fn sensor_count(&self) -> usize {
        self.placement.len()
    }

    /// Assemble `d_a` from per-sensor net injection and voltage (per-unit),
    /// ordered like `map_a`. Sensors are given in placement order.
    pub fn available_vector(&self, per_sensor: &[(Phasor3, Phasor3)]) -> Vec<Complex64> {
        self.map_a
            .iter()
            .map(|key| {
                let s = self
                    .placement
                    .buses()
                    .binary_search(&key.bus)
                    .expect("map_a only lists sensed buses");
                let (i, v) = &per_sensor[s];
                let (si, sv) = self.scales[s];
                match key.quantity {
                    Quantity::Current => i[key.phase as usize] * si,
                    Quantity::Voltage => v[key.phase as usize] * sv,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::feeder::tests::two_bus_json;

    fn two_bus() -> FeederModel {
        FeederModel::from_json(&two_bus_json()).unwrap()
    }

    #[test]
    fn two_bus_stamp_without_shunt() {
        let text = two_bus_json().replace("[0,0.01]", "[0,0]");
        let f = FeederModel::from_json(&text).unwrap();
        let s = SystemMatrix::build_with_units(&f, Units::PerUnit);
        let ys = f.lines[0].series_admittance;
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(s.y()[(p, q)], ys[(p, q)]);
                assert_eq!(s.y()[(p, 3 + q)], -ys[(p, q)]);
                assert_eq!(s.y()[(3 + p, q)], -ys[(p, q)]);
                assert_eq!(s.y()[(3 + p, 3 + q)], ys[(p, q)]);
            }
        }
    }

    #[test]
    fn shunt_is_split_between_ends() {
        let f = two_bus();
        let s = SystemMatrix::build_with_units(&f, Units::PerUnit);
        let l = &f.lines[0];
        let expect = l.series_admittance[(0, 0)] + l.shunt_admittance[(0, 0)] * 0.5;
        assert!((s.y()[(0, 0)] - expect).norm() < 1e-15);
        assert!((s.y()[(3, 3)] - expect).norm() < 1e-15);
    }

    #[test]
    fn h_is_identity_then_minus_y() {
        let s = SystemMatrix::build(&two_bus());
        let n = 6;
        assert_eq!(s.h().shape(), (n, 2 * n));
        for r in 0..n {
            for c in 0..n {
                let id = if r == c { 1.0 } else { 0.0 };
                assert_eq!(s.h()[(r, c)], Complex64::new(id, 0.0));
                assert_eq!(s.h()[(r, n + c)], -s.y()[(r, c)]);
            }
        }
    }

    #[test]
    fn full_placement_is_column_permutation() {
        let s = SystemMatrix::build(&two_bus());
        let p = s.partition(&Placement::from_ids(&[1, 2]).unwrap()).unwrap();
        assert_eq!(p.h_u.ncols(), 0);
        assert_eq!(&p.h_a, s.h());
    }

    #[test]
    fn placement_rejects_bad_input() {
        assert!(Placement::new([]).is_err());
        assert!(Placement::from_ids(&[2, 2]).is_err());
        let s = SystemMatrix::build(&two_bus());
        let err = s.partition(&Placement::from_ids(&[7]).unwrap()).unwrap_err();
        assert!(err.to_string().contains('7'));
        assert!(s.partition(&Placement::from_ids(&[1, 2, 3]).unwrap()).is_err());
    }

    #[test]
    fn column_keys_round_trip() {
        let s = SystemMatrix::build(&two_bus());
        for c in 0..s.h().ncols() {
            assert_eq!(s.column(s.column_key(c)), Some(c));
        }
    }

    #[test]
    fn unit_systems_agree_on_consistency() {
        let f = two_bus();
        for units in [Units::PerUnit, Units::Referred, Units::Physical] {
            let s = SystemMatrix::build_with_units(&f, units);
            let v = [crate::phasor::balanced(1.0, 0.0), crate::phasor::balanced(0.97, -0.02)];
            // I = Y V in per-unit
            let pu = SystemMatrix::build_with_units(&f, Units::PerUnit);
            let vv: Vec<Complex64> = v.iter().flatten().copied().collect();
            let iv = pu.y() * nalgebra::DVector::from_vec(vv);
            let i = [[iv[0], iv[1], iv[2]], [iv[3], iv[4], iv[5]]];
            let d = nalgebra::DVector::from_vec(s.measurement_vector(&i, &v));
            assert!((s.h() * &d).norm() / d.norm() < 1e-12);
        }
    }

    #[test]
    fn physical_units_hold_across_a_transformer() {
        let text = two_bus_json()
            .replace(r#"{"id": 1, "kv_base": 1.0"#, r#"{"id": 1, "kv_base": 24.9"#)
            .replace(r#"{"id": 2, "kv_base": 1.0"#, r#"{"id": 2, "kv_base": 4.16"#)
            .replace(r#""phases": "abc","#, r#""phases": "abc", "per_unit": true,"#);
        let f = FeederModel::from_json(&text).unwrap();
        let pu = SystemMatrix::build_with_units(&f, Units::PerUnit);
        let s = SystemMatrix::build_with_units(&f, Units::Physical);
        // off-diagonal blocks take the geometric mean of the two bases
        let z = 24.9 * 4.16;
        assert!((s.y()[(0, 3)] - pu.y()[(0, 3)] / z).norm() < 1e-15);
        assert!((s.y()[(3, 3)] - pu.y()[(3, 3)] / (4.16 * 4.16)).norm() < 1e-12);
        let v = [crate::phasor::balanced(1.0, 0.0), crate::phasor::balanced(0.96, -0.03)];
        let vv: Vec<Complex64> = v.iter().flatten().copied().collect();
        let iv = pu.y() * nalgebra::DVector::from_vec(vv);
        let i = [[iv[0], iv[1], iv[2]], [iv[3], iv[4], iv[5]]];
        let d = nalgebra::DVector::from_vec(s.measurement_vector(&i, &v));
        assert!((s.h() * &d).norm() / d.norm() < 1e-12);
        assert!((d[9].norm() - 0.96 * 4.16 / 3f64.sqrt()).abs() < 1e-12);
    }
}
