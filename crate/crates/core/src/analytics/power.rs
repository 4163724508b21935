//! Complex power and the overcurrent limit.

use crate::phasor::Phasor3;

/// Per-phase `S = v conj(i)`, split into `(P, Q)`.
pub fn complex_power(v: &Phasor3, i: &Phasor3) -> ([f64; 3], [f64; 3]) {
    let s: [_; 3] = std::array::from_fn(|p| v[p] * i[p].conj());
    (s.map(|c| c.re), s.map(|c| c.im))
}

/// Flag phase `p` when its current magnitude exceeds the rating. Phases
/// without a positive rating are never flagged.
pub fn check_overcurrent(imag: &[f64; 3], rating: &[f64; 3]) -> [bool; 3] {
    std::array::from_fn(|p| rating[p] > 0.0 && imag[p] > rating[p])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::Complex64;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);

    #[test]
    fn unity_power_factor() {
        let (p, q) = complex_power(&[ONE; 3], &[ONE; 3]);
        assert_eq!(p, [1.0; 3]);
        assert_eq!(q, [0.0; 3]);
    }

    #[test]
    fn pure_reactive_sign() {
        let j = Complex64::new(0.0, 1.0);
        let (p, q) = complex_power(&[ONE, ZERO, ZERO], &[j, ZERO, ZERO]);
        assert_eq!(p, [0.0; 3]);
        assert_eq!(q, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn overcurrent_boundary() {
        let r = [1.0, 2.0, 0.0];
        assert_eq!(check_overcurrent(&[1.0, 2.0, 5.0], &r), [false; 3]);
        assert_eq!(check_overcurrent(&[1.01, 2.0, 5.0], &r), [true, false, false]);
    }
}
