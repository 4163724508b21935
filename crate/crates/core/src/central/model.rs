use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{null_projector, select_rows};
use crate::model::PartitionedSystem;
use crate::phasor::Complex64;
use crate::placement::{objective_of, weakest_direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectorMode {
    /// `H_u` has at least as many columns as rows: project on the weakest
    /// left singular direction.
    SmallestSingular,
    /// `H_u` is tall (or empty): use the exact annihilator of its range.
    NullProjector,
}

/// Placement-dependent part of the central rule.
#[derive(Debug, Clone)]
pub struct CentralModel {
    pub partition: PartitionedSystem,
    pub mode: ProjectorMode,
    /// Weakest left singular vector of `H_u` (SmallestSingular mode).
    pub u_us: Option<DVector<Complex64>>,
    pub sigma_min: Option<f64>,
    /// `I - H_u H_u^+` over the rows of existing phases (NullProjector mode).
    pub null_projector: Option<DMatrix<Complex64>>,
    /// Placement objective, the largest value the metric can take.
    pub baseline: f64,
    rows: Vec<usize>,
    /// `H_a^H u` in SmallestSingular mode.
    w: Option<DVector<Complex64>>,
    /// `P H_a` in NullProjector mode.
    p_ha: Option<DMatrix<Complex64>>,
}

impl CentralModel {
    pub fn build(partition: PartitionedSystem) -> Self {
        let present = partition.present_rows();
        let rows: Vec<usize> = (0..present.len()).filter(|&r| present[r]).collect();
        let cols = partition.h_u.ncols();
        let mode = if cols > 0 && cols >= rows.len() {
            ProjectorMode::SmallestSingular
        } else {
            ProjectorMode::NullProjector
        };
        let baseline = objective_of(&partition);
        match mode {
            ProjectorMode::SmallestSingular => {
                let (u, sigma) = weakest_direction(&partition);
                let w = partition.h_a.adjoint() * &u;
                CentralModel {
                    mode,
                    u_us: Some(u),
                    sigma_min: Some(sigma),
                    null_projector: None,
                    baseline,
                    rows,
                    w: Some(w),
                    p_ha: None,
                    partition,
                }
            }
            ProjectorMode::NullProjector => {
                let hu = select_rows(&partition.h_u, &rows);
                let p = null_projector(&hu);
                let p_ha = &p * select_rows(&partition.h_a, &rows);
                CentralModel {
                    mode,
                    u_us: None,
                    sigma_min: None,
                    null_projector: Some(p),
                    baseline,
                    rows,
                    w: None,
                    p_ha: Some(p_ha),
                    partition,
                }
            }
        }
    }

    /// Rows of `H` that belong to existing phases, in order.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Central metric of one available-measurement vector. `None` when the
    /// vector is zero.
    pub fn metric(&self, d_a: &[Complex64]) -> Option<f64> {
        let norm2: f64 = d_a.iter().map(|c| c.norm_sqr()).sum();
        if norm2 == 0.0 || !norm2.is_finite() {
            return None;
        }
        let d = DVector::from_column_slice(d_a);
        let num = match self.mode {
            ProjectorMode::SmallestSingular => self.w.as_ref().expect("set in this mode").dotc(&d).norm_sqr(),
            ProjectorMode::NullProjector => (self.p_ha.as_ref().expect("set in this mode") * d).norm_squared(),
        };
        Some(num / norm2)
    }
}

/// Build the central model for a partition.
pub fn build_central_model(partition: PartitionedSystem) -> CentralModel {
    CentralModel::build(partition)
}
