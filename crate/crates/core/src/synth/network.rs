//! Three-phase network state for the generator: admittance assembly with
//! event modifications and a fixed-point load flow.
//!
//! This deliberately assembles its own per-unit admittance instead of using
//! [`crate::model::SystemMatrix`], so the two paths check each other.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::model::{Block, FeederModel, LineId, PhaseMask};
use crate::phasor::{Complex64, Phasor3};

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;

/// Active modifications of the intact feeder at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkState {
    /// Source magnitude, p.u.
    pub source: f64,
    /// `(bus index, phase, admittance)` shunts to ground.
    pub faults: Vec<(usize, usize, f64)>,
    /// Lines with opened phases.
    pub open: Vec<(LineId, PhaseMask)>,
    /// Per-node constant-power load, p.u.
    pub loads: Vec<Complex64>,
}

/// Solved voltages and the line blocks they were solved with.
#[derive(Debug, Clone)]
pub struct Solution {
    pub v: Vec<Complex64>,
    lines: Vec<(Block, Block)>,
}

impl Solution {
    pub fn bus_voltage(&self, b: usize) -> Phasor3 {
        [self.v[3 * b], self.v[3 * b + 1], self.v[3 * b + 2]]
    }

    /// Current leaving bus `b` into line `idx`.
    pub fn line_current(&self, feeder: &FeederModel, idx: usize, b: usize) -> Phasor3 {
        let line = &feeder.lines[idx];
        let m = feeder.bus_index(line.from_bus).expect("validated");
        let n = feeder.bus_index(line.to_bus).expect("validated");
        let other = if b == m { n } else { m };
        let (ys, ysh) = &self.lines[idx];
        let vb = nalgebra::Vector3::from(self.bus_voltage(b));
        let vo = nalgebra::Vector3::from(self.bus_voltage(other));
        let i = ys * (vb - vo) + ysh * vb * Complex64::new(0.5, 0.0);
        [i[0], i[1], i[2]]
    }
}

/// Series admittance with the given phases' paths removed.
fn open_phases(ys: &Block, open: PhaseMask, line_phases: PhaseMask) -> Block {
    let keep: Vec<usize> = line_phases.phases().filter(|p| !open.has(*p)).collect();
    let mut out = Block::zeros();
    if keep.is_empty() {
        return out;
    }
    let all: Vec<usize> = line_phases.phases().collect();
    let sub = DMatrix::from_fn(all.len(), all.len(), |r, c| ys[(all[r], all[c])]);
    let Some(z) = sub.try_inverse() else { return out };
    let pos: Vec<usize> = keep.iter().map(|p| all.iter().position(|q| q == p).expect("subset")).collect();
    let zk = DMatrix::from_fn(keep.len(), keep.len(), |r, c| z[(pos[r], pos[c])]);
    if let Some(yk) = zk.try_inverse() {
        for (r, &pr) in keep.iter().enumerate() {
            for (c, &pc) in keep.iter().enumerate() {
                out[(pr, pc)] = yk[(r, c)];
            }
        }
    }
    out
}

/// Admittance and energisation for one network state.
#[derive(Debug, Clone)]
pub struct Assembled {
    y: DMatrix<Complex64>,
    lines: Vec<(Block, Block)>,
    /// Node reaches the source through its own phase.
    energised: Vec<bool>,
    /// Node is coupled to the source at all (possibly only mutually).
    coupled: Vec<bool>,
}

pub fn assemble(feeder: &FeederModel, state: &NetworkState) -> Assembled {
    let n = 3 * feeder.bus_count();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut lines = Vec::with_capacity(feeder.lines.len());
    let mut self_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut any_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for line in &feeder.lines {
        let m = feeder.bus_index(line.from_bus).expect("validated");
        let k = feeder.bus_index(line.to_bus).expect("validated");
        let mut ys = line.series_admittance;
        let mut ysh = line.shunt_admittance;
        for (id, mask) in &state.open {
            if *id == line.id {
                ys = open_phases(&ys, *mask, line.phases);
                for p in mask.phases() {
                    for q in 0..3 {
                        ysh[(p, q)] = Complex64::new(0.0, 0.0);
                        ysh[(q, p)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
        let end = ys + ysh * Complex64::new(0.5, 0.0);
        for p in 0..3 {
            for q in 0..3 {
                y[(3 * m + p, 3 * m + q)] += end[(p, q)];
                y[(3 * k + p, 3 * k + q)] += end[(p, q)];
                y[(3 * m + p, 3 * k + q)] -= ys[(p, q)];
                y[(3 * k + p, 3 * m + q)] -= ys[(p, q)];
                if ys[(p, q)].norm() > 0.0 {
                    any_adj[3 * m + p].push(3 * k + q);
                    any_adj[3 * k + q].push(3 * m + p);
                    any_adj[3 * m + p].push(3 * m + q);
                    any_adj[3 * k + p].push(3 * k + q);
                    if p == q {
                        self_adj[3 * m + p].push(3 * k + p);
                        self_adj[3 * k + p].push(3 * m + p);
                    }
                }
            }
        }
        lines.push((ys, ysh));
    }
    let s = feeder.bus_index(feeder.slack).expect("validated");
    let energised = reach(&self_adj, 3 * s..3 * s + 3);
    let coupled = reach(&any_adj, 3 * s..3 * s + 3);
    for &(b, p, g) in &state.faults {
        if energised[3 * b + p] {
            y[(3 * b + p, 3 * b + p)] += Complex64::new(g, 0.0);
        }
    }
    Assembled {
        y,
        lines,
        energised,
        coupled,
    }
}

fn reach(adj: &[Vec<usize>], roots: std::ops::Range<usize>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue: VecDeque<usize> = roots.collect();
    for &r in &queue {
        seen[r] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Fixed-point (implicit Z-bus Gauss) load flow.
///
/// Loads are constant power above `const_z_below` p.u. and constant
/// impedance below it. Nodes that lost their own-phase path to the source
/// drop their loads but keep any mutually induced voltage; nodes with no
/// coupling to the source at all are held at zero.
///
/// Returns the solution or `(iterations, mismatch)` on failure.
pub fn solve(
    feeder: &FeederModel,
    net: &Assembled,
    state: &NetworkState,
    const_z_below: f64,
    warm: Option<&[Complex64]>,
) -> Result<Solution, (usize, f64)> {
    let n = net.y.nrows();
    let s = feeder.bus_index(feeder.slack).expect("validated");
    let src = crate::phasor::balanced(state.source, 0.0);
    let slack_rows = [3 * s, 3 * s + 1, 3 * s + 2];
    let free: Vec<usize> = (0..n).filter(|r| net.coupled[*r] && !slack_rows.contains(r)).collect();
    let y_nn = DMatrix::from_fn(free.len(), free.len(), |r, c| net.y[(free[r], free[c])]);
    let y_ns = DMatrix::from_fn(free.len(), 3, |r, c| net.y[(free[r], slack_rows[c])]);
    let rhs_src = &y_ns * DVector::from_row_slice(&src);
    let lu = y_nn.lu();

    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for (p, r) in slack_rows.iter().enumerate() {
        v[*r] = src[p];
    }
    for &r in &free {
        v[r] = match warm {
            Some(w) if w[r].norm() > 0.0 => w[r],
            _ => src[r % 3],
        };
    }
    let vz2 = const_z_below * const_z_below;
    let mut mismatch = f64::INFINITY;
    for it in 0..MAX_ITERATIONS {
        let inj = DVector::from_fn(free.len(), |i, _| {
            let r = free[i];
            let sl = state.loads[r];
            if !net.energised[r] || sl == Complex64::new(0.0, 0.0) {
                return Complex64::new(0.0, 0.0);
            }
            let vr = v[r];
            if vr.norm_sqr() < vz2 {
                -sl.conj() * vr / vz2
            } else {
                -(sl / vr).conj()
            }
        });
        let Some(vn) = lu.solve(&(inj - &rhs_src)) else {
            return Err((it, f64::INFINITY));
        };
        mismatch = 0.0;
        for (i, &r) in free.iter().enumerate() {
            mismatch = f64::max(mismatch, (vn[i] - v[r]).norm());
            v[r] = vn[i];
        }
        if !mismatch.is_finite() {
            return Err((it + 1, mismatch));
        }
        if mismatch < TOLERANCE {
            return Ok(Solution {
                v,
                lines: net.lines.clone(),
            });
        }
    }
    Err((MAX_ITERATIONS, mismatch))
}
