//! Central engine: the placement-dependent subspace metric over fused
//! sensor data, its change detection, and the merged event log.

mod detect;
mod fusion;
mod log;
mod model;

pub use detect::{central_change_stream, CentralConfig, CentralDetector};
pub use fusion::{FusedSample, Fuser, FusionOutput};
pub use log::{fuse_reports, EventLog, LogEntry, Origin};
pub use model::{build_central_model, CentralModel, ProjectorMode};

/// Metric of a fused sample.
pub fn central_metric(model: &CentralModel, sample: &FusedSample) -> Option<f64> {
    model.metric(&sample.d_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeederModel, Placement, SystemMatrix};
    use crate::phasor::Complex64;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ieee34() -> SystemMatrix {
        SystemMatrix::build(&FeederModel::from_json(include_str!("../../data/ieee34.feeder")).unwrap())
    }

    /// `d` with `I = Y V` for a random `V`, restricted to existing phases.
    fn consistent(s: &SystemMatrix, seed: u64) -> DVector<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = s.y().nrows();
        let v = DVector::from_fn(n, |r, _| {
            if s.present_rows()[r] {
                Complex64::new(rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5))
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let i = s.y() * &v;
        let mut d = DVector::zeros(2 * n);
        d.rows_mut(0, n).copy_from(&i);
        d.rows_mut(n, n).copy_from(&v);
        d
    }

    fn available(part: &crate::model::PartitionedSystem, s: &SystemMatrix, d: &DVector<Complex64>) -> Vec<Complex64> {
        part.map_a.iter().map(|k| d[s.column(*k).unwrap()]).collect()
    }

    #[test]
    fn smallest_singular_mode_on_ieee34() {
        let s = ieee34();
        let part = s.partition(&Placement::from_ids(&[7, 19, 31]).unwrap()).unwrap();
        assert_eq!(part.h_a.shape(), (102, 18));
        assert_eq!(part.h_u.shape(), (102, 186));
        let m = build_central_model(part);
        assert_eq!(m.mode, ProjectorMode::SmallestSingular);
        let u = m.u_us.as_ref().unwrap();
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let proj = (u.adjoint() * &m.partition.h_u).norm();
        assert!((proj - m.sigma_min.unwrap()).abs() <= 1e-10 * proj.max(1.0));
        let svals = crate::linalg::singular_values(&crate::linalg::select_rows(&m.partition.h_u, m.rows()));
        assert!((svals.last().unwrap() - m.sigma_min.unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn full_placement_is_exact() {
        let s = ieee34();
        let all: Vec<u32> = (1..=34).collect();
        let part = s.partition(&Placement::from_ids(&all).unwrap()).unwrap();
        let m = build_central_model(part);
        assert_eq!(m.mode, ProjectorMode::NullProjector);
        let d = consistent(&s, 1);
        let x = m.metric(&available(&m.partition, &s, &d)).unwrap();
        assert!(x < 1e-18, "{x}");
    }

    #[test]
    fn tall_h_u_projector_is_idempotent_and_exact() {
        let s = ieee34();
        let ids: Vec<u32> = (1..=34).filter(|b| b % 5 != 0).collect();
        let part = s.partition(&Placement::from_ids(&ids).unwrap()).unwrap();
        let m = build_central_model(part);
        assert_eq!(m.mode, ProjectorMode::NullProjector);
        let p = m.null_projector.as_ref().unwrap();
        assert!((p * p - p).norm() < 1e-10);
        let d = consistent(&s, 2);
        let x = m.metric(&available(&m.partition, &s, &d)).unwrap();
        assert!(x < 1e-18, "{x}");
    }

    #[test]
    fn metric_is_scale_and_phase_invariant() {
        let s = ieee34();
        let part = s.partition(&Placement::from_ids(&[3, 12, 30]).unwrap()).unwrap();
        let m = build_central_model(part);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d: Vec<Complex64> = (0..18)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let x = m.metric(&d).unwrap();
        let c = Complex64::new(-3.5, 2.0);
        let scaled: Vec<Complex64> = d.iter().map(|v| v * c).collect();
        assert!((m.metric(&scaled).unwrap() - x).abs() <= 1e-12 * x);
        assert!(m.metric(&vec![Complex64::new(0.0, 0.0); 18]).is_none());
        assert!(x <= m.baseline * (1.0 + 1e-12));
    }
}
