//! Three-phase phasor helpers.

use std::f64::consts::PI;

pub use nalgebra::Complex;

pub type Complex64 = Complex<f64>;

/// Phase a, b, c phasors of one quantity.
pub type Phasor3 = [Complex64; 3];

pub const ZERO3: Phasor3 = [Complex64::new(0.0, 0.0); 3];

/// The 120 degree rotation operator `a = e^{j 2pi/3}`.
pub fn rotation() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

/// Balanced positive-sequence set of magnitude `mag` with phase a at `angle`.
pub fn balanced(mag: f64, angle: f64) -> Phasor3 {
    [
        Complex64::from_polar(mag, angle),
        Complex64::from_polar(mag, angle - 2.0 * PI / 3.0),
        Complex64::from_polar(mag, angle + 2.0 * PI / 3.0),
    ]
}

/// Positive-sequence component `(v_a + a v_b + a^2 v_c) / 3`.
pub fn positive_sequence(v: &Phasor3) -> Complex64 {
    let a = rotation();
    (v[0] + a * v[1] + a * a * v[2]) / 3.0
}

pub fn magnitudes(v: &Phasor3) -> [f64; 3] {
    [v[0].norm(), v[1].norm(), v[2].norm()]
}

pub fn scale(v: &Phasor3, s: Complex64) -> Phasor3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

pub fn add(a: &Phasor3, b: &Phasor3) -> Phasor3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn is_finite(v: &Phasor3) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_sequence_of_balanced_set() {
        let v = balanced(1.2, 0.3);
        let p = positive_sequence(&v);
        assert!((p - Complex64::from_polar(1.2, 0.3)).norm() < 1e-12);
    }

    #[test]
    fn negative_sequence_has_no_positive_part() {
        let v = [
            Complex64::from_polar(1.0, 0.0),
            Complex64::from_polar(1.0, 2.0 * PI / 3.0),
            Complex64::from_polar(1.0, -2.0 * PI / 3.0),
        ];
        assert!(positive_sequence(&v).norm() < 1e-12);
    }
}
