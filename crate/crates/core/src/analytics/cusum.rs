//! Two-sided CUSUM on a standardised innovation with an adaptive mean.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CusumConfig {
    /// Forgetting factor of the exponential mean/variance window.
    pub lambda: f64,
    /// Drift (allowance) subtracted from every standardised innovation.
    pub nu: f64,
    /// Decision threshold on either accumulator.
    pub h: f64,
    /// Samples used to estimate mean and variance before arming, and again
    /// after each alarm.
    pub warmup: usize,
    /// Lower bound on the variance estimate.
    pub var_floor: f64,
    /// Lower bound on the standard deviation relative to `|mean|`.
    pub rel_std_floor: f64,
}

impl Default for CusumConfig {
    fn default() -> Self {
        CusumConfig {
            lambda: 0.99,
            nu: 0.5,
            h: 5.0,
            warmup: 60,
            var_floor: 1e-12,
            rel_std_floor: 0.0,
        }
    }
}

impl CusumConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(format!("lambda must be in (0, 1), got {}", self.lambda));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(format!("nu must be non-negative, got {}", self.nu));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(format!("h must be positive, got {}", self.h));
        }
        if self.warmup < 2 {
            return Err(format!("warmup must be at least 2 samples, got {}", self.warmup));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(format!("var_floor must be positive, got {}", self.var_floor));
        }
        if !(self.rel_std_floor >= 0.0 && self.rel_std_floor.is_finite()) {
            return Err(format!("rel_std_floor must be non-negative, got {}", self.rel_std_floor));
        }
        Ok(())
    }

    pub fn with_floor(mut self, std_floor: f64, rel_std_floor: f64) -> Self {
        self.var_floor = std_floor * std_floor;
        self.rel_std_floor = rel_std_floor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    None,
    Change { k: u64, direction: Direction },
}

impl Decision {
    pub fn is_change(&self) -> bool {
        matches!(self, Decision::Change { .. })
    }
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    cfg: CusumConfig,
    mean: f64,
    var: f64,
    g_plus: f64,
    g_minus: f64,
    warm: usize,
    m2: f64,
    alarms: u64,
}

impl DetectorState {
    pub fn new(cfg: CusumConfig) -> Self {
        DetectorState {
            cfg,
            mean: 0.0,
            var: 0.0,
            g_plus: 0.0,
            g_minus: 0.0,
            warm: 0,
            m2: 0.0,
            alarms: 0,
        }
    }

    pub fn config(&self) -> &CusumConfig {
        &self.cfg
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn accumulators(&self) -> (f64, f64) {
        (self.g_plus, self.g_minus)
    }

    pub fn is_armed(&self) -> bool {
        self.warm >= self.cfg.warmup
    }

    pub fn alarms(&self) -> u64 {
        self.alarms
    }

    fn effective_var(&self) -> f64 {
        let rel = self.cfg.rel_std_floor * self.mean.abs();
        self.var.max(self.cfg.var_floor).max(rel * rel)
    }

    fn restart(&mut self, x: f64) {
        self.g_plus = 0.0;
        self.g_minus = 0.0;
        self.mean = x;
        self.var = 0.0;
        self.m2 = 0.0;
        self.warm = 1;
    }

    /// Feed one observation taken at sample `k`.
    pub fn step(&mut self, k: u64, x: f64) -> Decision {
        if !x.is_finite() {
            return Decision::None;
        }
        if !self.is_armed() {
            self.warm += 1;
            let delta = x - self.mean;
            self.mean += delta / self.warm as f64;
            self.m2 += delta * (x - self.mean);
            self.var = if self.warm > 1 { self.m2 / (self.warm - 1) as f64 } else { 0.0 };
            return Decision::None;
        }
        let z = (x - self.mean) / self.effective_var().sqrt();
        self.g_plus = (self.g_plus + z - self.cfg.nu).max(0.0);
        self.g_minus = (self.g_minus - z - self.cfg.nu).max(0.0);
        if self.g_plus > self.cfg.h || self.g_minus > self.cfg.h {
            let direction = if self.g_plus > self.cfg.h { Direction::Up } else { Direction::Down };
            self.alarms += 1;
            self.restart(x);
            return Decision::Change { k, direction };
        }
        let lambda = self.cfg.lambda;
        let delta = x - self.mean;
        self.mean += (1.0 - lambda) * delta;
        self.var = lambda * self.var + (1.0 - lambda) * delta * delta;
        Decision::None
    }
}

/// Single-step form of [`DetectorState::step`].
pub fn cusum_step(state: &mut DetectorState, k: u64, x: f64) -> Decision {
    state.step(k, x)
}
