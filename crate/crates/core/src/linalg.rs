//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::phasor::Complex64;

/// Relative gap below which two singular values are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Singular values of `m`, largest first.
pub fn singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Left singular vector for the smallest singular value together with that
/// value.
///
/// Only `min(rows, cols)` singular values exist, so for a tall matrix this
/// is the smallest of those, not a null-space direction. When the smallest
/// value is tied with the next one the vector is taken from the tied
/// subspace as the normalised projection of the first unit basis vector
/// that has a non-zero projection. The result is phase-normalised so its
/// first non-negligible entry is real and positive.
pub fn smallest_left_singular(m: &DMatrix<Complex64>) -> (DVector<Complex64>, f64) {
    let rows = m.nrows();
    assert!(rows > 0, "matrix has no rows");
    if m.ncols() == 0 {
        let mut e = DVector::zeros(rows);
        e[0] = Complex64::new(1.0, 0.0);
        return (e, 0.0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    let sigma = s[order[0]];
    let tied: Vec<usize> = order
        .iter()
        .copied()
        .take_while(|&j| s[j] - sigma <= TIE_TOLERANCE * s[j])
        .collect();
    // a thin U of a fat matrix is square, so a rank deficiency cannot hide
    // outside the computed columns; for a tall matrix only the computed
    // singular values count
    let v = if tied.len() == 1 {
        u.column(tied[0]).into_owned()
    } else {
        let basis = u.select_columns(&tied);
        let mut chosen = None;
        for r in 0..rows {
            // P e_r = basis * (row r of basis)^H
            let coeffs = basis.row(r).adjoint();
            let p = &basis * coeffs;
            let n = p.norm();
            if n > 1e-8 {
                chosen = Some(p / Complex64::new(n, 0.0));
                break;
            }
        }
        chosen.unwrap_or_else(|| u.column(tied[0]).into_owned())
    };
    (phase_normalize(v), sigma)
}

/// Rotate `v` so its first entry above `1e-12 * max|v|` is real positive.
pub fn phase_normalize(mut v: DVector<Complex64>) -> DVector<Complex64> {
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return v;
    }
    if let Some(c) = v.iter().find(|c| c.norm() > 1e-12 * max).copied() {
        let rot = c.conj() / c.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
    v
}

/// `I - A A^+`: orthogonal projector onto the complement of `range(A)`.
///
/// The range is spanned by left singular vectors whose singular value
/// exceeds `rows * eps * sigma_max`.
pub fn null_projector(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let rows = a.nrows();
    let mut p = DMatrix::<Complex64>::identity(rows, rows);
    if a.ncols() == 0 || rows == 0 {
        return p;
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = rows.max(a.ncols()) as f64 * f64::EPSILON * smax;
    for j in 0..s.len() {
        if s[j] > tol {
            let col = u.column(j);
            p -= col * col.adjoint();
        }
    }
    p
}

/// Rows of `m` selected by `keep`.
pub fn select_rows(m: &DMatrix<Complex64>, keep: &[usize]) -> DMatrix<Complex64> {
    m.select_rows(keep)
}

/// Largest eigenvalue of a Hermitian matrix via a dense eigensolver.
pub fn hermitian_lambda_max(w: &DMatrix<Complex64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let sym = (w + w.adjoint()) * Complex64::new(0.5, 0.0);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn smallest_singular_of_fat_matrix() {
        let m = random(5, 9, 3);
        let (u, s) = smallest_left_singular(&m);
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let proj = u.adjoint() * &m;
        assert!((proj.norm() - s).abs() < 1e-10);
        let all = singular_values(&m);
        assert!((all[all.len() - 1] - s).abs() < 1e-12);
    }

    #[test]
    fn tie_break_is_deterministic_and_normalised() {
        // identity has every singular value tied
        let m = DMatrix::<Complex64>::identity(4, 4);
        let (u, s) = smallest_left_singular(&m);
        assert!((s - 1.0).abs() < 1e-15);
        assert!((u[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(u.iter().skip(1).all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn phase_normalised_first_entry_real_positive() {
        let m = random(4, 6, 11);
        let (u, _) = smallest_left_singular(&m);
        assert!(u[0].re > 0.0);
        assert!(u[0].im.abs() < 1e-14);
        // phase normalisation removes the global rotation
        let rot = Complex64::from_polar(1.0, 0.7);
        let (u2, _) = smallest_left_singular(&(m * rot));
        assert!((u - u2).norm() < 1e-9);
    }

    #[test]
    fn null_projector_is_idempotent_and_annihilates_range() {
        let a = random(7, 3, 5);
        let p = null_projector(&a);
        assert!((&p * &p - &p).norm() < 1e-10);
        assert!((&p * &a).norm() < 1e-10);
        assert!((p.trace().re - 4.0).abs() < 1e-10);
    }

    #[test]
    fn lambda_max_of_outer_product() {
        let x = random(5, 1, 9);
        let w = &x * x.adjoint();
        assert!((hermitian_lambda_max(&w) - x.norm_squared()).abs() < 1e-12);
    }
}
