//! Quasi-steady-state validity: rank-one test on windowed correlations.
//!
//! Over `M` samples the stacked correlation `R = 1/(M-1) sum [i; v] v^H`
//! is rank one while the line behaves as a constant admittance. The
//! residual is what is left of `R R^H` after removing its best rank-one
//! part.

use std::collections::VecDeque;

use nalgebra::{SMatrix, SVector};

use crate::phasor::{Complex64, Phasor3};

pub type Correlation = SMatrix<Complex64, 6, 3>;

/// Ring of the last `capacity` `(i, v)` pairs of one line.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    capacity: usize,
    ring: VecDeque<(Phasor3, Phasor3)>,
}

impl WindowBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "window needs at least two samples");
        WindowBuffer {
            capacity,
            ring: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, i: Phasor3, v: Phasor3) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back((i, v));
    }

    pub fn is_full(&self) -> bool {
        self.ring.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.ring.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Phasor3, Phasor3)> {
        self.ring.iter()
    }
}

/// Stacked `(R_iv; R_vv)`, or `None` until the window is full.
pub fn qss_correlations(window: &WindowBuffer) -> Option<Correlation> {
    if !window.is_full() {
        return None;
    }
    let mut r = Correlation::zeros();
    for (i, v) in window.iter() {
        let top = SVector::<Complex64, 3>::from_column_slice(i);
        let vv = SVector::<Complex64, 3>::from_column_slice(v);
        let stacked = SVector::<Complex64, 6>::from_fn(|row, _| if row < 3 { top[row] } else { vv[row - 3] });
        r += stacked * vv.adjoint();
    }
    Some(r / Complex64::new((window.capacity() - 1) as f64, 0.0))
}

/// Singular values of `R`, largest first.
pub fn singular_values(r: &Correlation) -> [f64; 3] {
    let mut s: [f64; 3] = r.singular_values().into();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `min_u ||(I - u u^H) R R^H||_F` over unit `u`, which is
/// `sqrt(sigma_2^4 + sigma_3^4)`.
pub fn qss_residual(r: &Correlation) -> f64 {
    let s = singular_values(r);
    (s[1].powi(4) + s[2].powi(4)).sqrt()
}
