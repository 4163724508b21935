//! Local frequency deviation from the positive-sequence phase advance.
//!
//! The per-sample increment `arg(v+[k] conj(v+[k-1]))` is smoothed with an
//! exponential window. The first increment initialises the filter.

use std::f64::consts::PI;

use crate::phasor::{positive_sequence, Complex64, Phasor3};
use crate::SAMPLE_RATE_HZ;

/// Positive-sequence magnitudes below this are treated as missing.
const MIN_MAGNITUDE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FrequencyEstimator {
    lambda: f64,
    prev: Option<Complex64>,
    beta: Option<f64>,
    quality_flags: u64,
}

impl FrequencyEstimator {
    pub fn new(lambda: f64) -> Self {
        FrequencyEstimator {
            lambda,
            prev: None,
            beta: None,
            quality_flags: 0,
        }
    }

    /// Feed one voltage phasor; returns the smoothed phase advance in
    /// radians per sample, or `None` until two usable samples were seen.
    pub fn update(&mut self, v: &Phasor3) -> Option<f64> {
        let vp = positive_sequence(v);
        if vp.norm() < MIN_MAGNITUDE || !vp.re.is_finite() || !vp.im.is_finite() {
            self.quality_flags += 1;
            return self.beta;
        }
        if let Some(prev) = self.prev {
            let inc = (vp * prev.conj()).arg();
            self.beta = Some(match self.beta {
                None => inc,
                Some(b) => self.lambda * b + (1.0 - self.lambda) * inc,
            });
        }
        self.prev = Some(vp);
        self.beta
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// Samples skipped because the positive sequence vanished.
    pub fn quality_flags(&self) -> u64 {
        self.quality_flags
    }
}

/// Frequency deviation in hertz for a phase advance in radians per sample.
pub fn beta_to_hz(beta: f64) -> f64 {
    beta * SAMPLE_RATE_HZ / (2.0 * PI)
}

pub fn hz_to_beta(df: f64) -> f64 {
    df * 2.0 * PI / SAMPLE_RATE_HZ
}

/// Estimate over a window of frames; the last smoothed value.
pub fn estimate_frequency_drift(frames: &[Phasor3], lambda: f64) -> Option<f64> {
    let mut est = FrequencyEstimator::new(lambda);
    frames.iter().fold(None, |_, v| est.update(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::{balanced, scale};

    fn rotating(beta: impl Fn(u64) -> f64, n: u64) -> Vec<Phasor3> {
        let base = balanced(1.0, 0.3);
        let mut phase = 0.0;
        (0..n)
            .map(|k| {
                phase += beta(k);
                scale(&base, Complex64::from_polar(1.0, phase))
            })
            .collect()
    }

    #[test]
    fn tracks_constant_drift() {
        let beta = hz_to_beta(0.1);
        let frames = rotating(|_| beta, 200);
        let est = estimate_frequency_drift(&frames, 0.9).unwrap();
        assert!((est - beta).abs() < 1e-9);
        assert!((beta_to_hz(est) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn constant_phasors_give_zero() {
        let frames = vec![balanced(1.0, 0.0); 50];
        assert_eq!(estimate_frequency_drift(&frames, 0.9), Some(0.0));
    }

    #[test]
    fn step_response_crosses_half_within_bound() {
        let lambda: f64 = 0.9;
        let step = hz_to_beta(5.0);
        let k0 = 100;
        let frames = rotating(|k| if k >= k0 { step } else { 0.0 }, 200);
        let mut est = FrequencyEstimator::new(lambda);
        let mut crossed = None;
        for (k, v) in frames.iter().enumerate() {
            if let Some(b) = est.update(v) {
                if k as u64 >= k0 && b >= step / 2.0 && crossed.is_none() {
                    crossed = Some(k as u64 - k0);
                }
            }
        }
        let bound = (2f64.ln() / (1.0 - lambda)).ceil() as u64;
        assert!(crossed.unwrap() <= bound);
    }

    #[test]
    fn zero_sequence_holds_estimate() {
        let mut est = FrequencyEstimator::new(0.9);
        est.update(&balanced(1.0, 0.0));
        let b = est.update(&balanced(1.0, 0.01));
        let zero = [Complex64::new(0.0, 0.0); 3];
        assert_eq!(est.update(&zero), b);
        assert_eq!(est.quality_flags(), 1);
    }
}
