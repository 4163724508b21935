//! Surge / drop / oscillation labelling of a detected change.

use serde::{Deserialize, Serialize};

use super::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendConfig {
    /// Net change over the slope window, in units of the noise level,
    /// needed to call a surge or drop.
    pub s_min: f64,
    /// Post/pre variance ratio that makes a flat change an oscillation.
    pub rho: f64,
    /// Samples kept before the change.
    pub pre: usize,
    /// Samples used after the change.
    pub post: usize,
    /// Pre-change samples included in the slope fit.
    pub lead: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            s_min: 3.0,
            rho: 4.0,
            pre: 24,
            post: 24,
            lead: 12,
        }
    }
}

impl TrendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.s_min > 0.0 && self.rho > 1.0) {
            return Err("trend needs s_min > 0 and rho > 1".into());
        }
        if self.post < 3 || self.pre < 2 || self.lead > self.pre {
            return Err("trend windows need post >= 3, pre >= 2 and lead <= pre".into());
        }
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Least-squares slope and intercept of `x` against its index.
pub fn ls_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (0.0, x.first().copied().unwrap_or(0.0));
    }
    let tm = (n - 1.0) / 2.0;
    let xm = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - tm;
        sxy += dt * (v - xm);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    (slope, xm - slope * tm)
}

/// Label the behaviour of a signal around a change.
///
/// `pre` ends just before the change, `post` starts at it. `noise` is the
/// channel's reference standard deviation.
pub fn classify_trend(pre: &[f64], post: &[f64], noise: f64, cfg: &TrendConfig) -> Label {
    let lead = &pre[pre.len().saturating_sub(cfg.lead)..];
    let window: Vec<f64> = lead.iter().chain(post).copied().collect();
    let (slope, _) = ls_fit(&window);
    let delta = slope * (window.len().saturating_sub(1)) as f64;

    let (ps, pi) = ls_fit(post);
    let detrended: Vec<f64> = post.iter().enumerate().map(|(t, v)| v - (pi + ps * t as f64)).collect();
    let spread = variance(&detrended).sqrt().max(noise);
    if delta.abs() > cfg.s_min * spread {
        return if delta > 0.0 { Label::Surge } else { Label::Drop };
    }
    if variance(post) > cfg.rho * variance(pre).max(noise * noise) {
        return Label::Oscillation;
    }
    if mean(post) >= mean(pre) {
        Label::Surge
    } else {
        Label::Drop
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrendConfig {
        TrendConfig::default()
    }

    #[test]
    fn ramp_up_is_surge() {
        let pre = vec![1.0; 24];
        let post: Vec<f64> = (0..24).map(|t| 1.0 + 0.05 * t as f64).collect();
        assert_eq!(classify_trend(&pre, &post, 1e-3, &cfg()), Label::Surge);
    }

    #[test]
    fn step_down_is_drop() {
        let pre = vec![2.0; 24];
        let post = vec![1.5; 24];
        assert_eq!(classify_trend(&pre, &post, 1e-3, &cfg()), Label::Drop);
    }

    #[test]
    fn sinusoid_onset_is_oscillation() {
        let pre = vec![0.0; 24];
        let post: Vec<f64> = (0..24).map(|t| (t as f64 * 2.0 * std::f64::consts::PI / 6.0).sin()).collect();
        assert_eq!(classify_trend(&pre, &post, 1e-3, &cfg()), Label::Oscillation);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|t| 3.0 - 0.5 * t as f64).collect();
        let (s, i) = ls_fit(&x);
        assert!((s + 0.5).abs() < 1e-12 && (i - 3.0).abs() < 1e-12);
    }
}
