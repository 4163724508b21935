//! TOML configuration with `--set key=value` overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use phasorguard::analytics::{ChannelFloors, CusumConfig, LocalConfig, SegmentConfig, TrendConfig, VoltageThresholds};
use phasorguard::central::CentralConfig;
use phasorguard::pipeline::PipelineConfig;
use phasorguard::transport::{CentralServeConfig, Codec, LocalServeConfig, DEFAULT_PORT};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Network {
    pub port: u16,
    /// Samples the central side waits for a straggler.
    pub align_window: u64,
    /// Seconds a sensor may stay away before its samples become gaps.
    pub grace_s: f64,
    pub ack_every: u64,
    pub heartbeat_s: f64,
    pub reconnect_ms: u64,
    /// Seconds a sensor waits for acknowledgement once its input is done.
    pub linger_s: f64,
    pub codec: Codec,
}

impl Default for Network {
    fn default() -> Self {
        Network {
            port: DEFAULT_PORT,
            align_window: 24,
            grace_s: 5.0,
            ack_every: 120,
            heartbeat_s: 1.0,
            reconnect_ms: 200,
            linger_s: 30.0,
            codec: Codec::Binary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Where unacknowledged sensor messages are kept across restarts.
    pub spool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Samples per local analysis window.
    pub window: usize,
    pub freq_lambda: f64,
    pub cusum: CusumConfig,
    pub segment: SegmentConfig,
    pub voltage: VoltageThresholds,
    pub trend: TrendConfig,
    pub floors: ChannelFloors,
    pub central: CentralConfig,
    pub network: Network,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        let local = LocalConfig::default();
        Config {
            window: local.window,
            freq_lambda: local.freq_lambda,
            cusum: local.cusum,
            segment: local.segment,
            voltage: local.voltage,
            trend: local.trend,
            floors: local.floors,
            central: CentralConfig::default(),
            network: Network::default(),
            paths: Paths::default(),
        }
    }
}

fn check(ok: bool, what: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(what.to_string()))
    }
}

fn check_cusum(c: &CusumConfig, at: &str) -> Result<(), CliError> {
    check(c.lambda > 0.0 && c.lambda < 1.0, &format!("{at}.lambda must be in (0, 1)"))?;
    check(c.nu >= 0.0, &format!("{at}.nu must be >= 0"))?;
    check(c.h > 0.0, &format!("{at}.h must be > 0"))?;
    check(c.warmup >= 2, &format!("{at}.warmup must be >= 2"))?;
    check(c.var_floor >= 0.0, &format!("{at}.var_floor must be >= 0"))?;
    check(c.rel_std_floor >= 0.0, &format!("{at}.rel_std_floor must be >= 0"))
}

fn check_segment(s: &SegmentConfig, at: &str) -> Result<(), CliError> {
    check(s.t1 >= 1 && s.t1 <= s.t2, &format!("{at} needs 1 <= t1 <= t2"))
}

fn check_trend(t: &TrendConfig, at: &str) -> Result<(), CliError> {
    check(t.s_min > 0.0, &format!("{at}.s_min must be > 0"))?;
    check(t.rho > 1.0, &format!("{at}.rho must be > 1"))?;
    check(t.pre >= 2 && t.post >= 2, &format!("{at}.pre and {at}.post must be >= 2"))?;
    check(t.lead <= t.pre, &format!("{at}.lead must not exceed {at}.pre"))
}

impl Config {
    /// Reads `path` (if any), applies `overrides` and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check(self.window >= 2, "window must be >= 2")?;
        check(self.freq_lambda > 0.0 && self.freq_lambda < 1.0, "freq_lambda must be in (0, 1)")?;
        check_cusum(&self.cusum, "cusum")?;
        check_cusum(&self.central.cusum, "central.cusum")?;
        check_segment(&self.segment, "segment")?;
        check_segment(&self.central.segment, "central.segment")?;
        check_trend(&self.trend, "trend")?;
        check_trend(&self.central.trend, "central.trend")?;
        let v = &self.voltage;
        check(
            0.0 <= v.interruption && v.interruption < v.sag && v.sag < 1.0 && 1.0 < v.swell && v.swell < v.swell_max,
            "voltage needs 0 <= interruption < sag < 1 < swell < swell_max",
        )?;
        check(v.long_duration_s > 0.0, "voltage.long_duration_s must be > 0")?;
        let f = &self.floors;
        check(
            [f.power, f.current, f.frequency, f.qss].iter().all(|x| *x >= 0.0),
            "floors must be >= 0",
        )?;
        let n = &self.network;
        check(n.align_window >= 1, "network.align_window must be >= 1")?;
        check(n.grace_s >= 0.0 && n.grace_s.is_finite(), "network.grace_s must be >= 0")?;
        check(n.heartbeat_s > 0.0 && n.heartbeat_s.is_finite(), "network.heartbeat_s must be > 0")?;
        check(n.linger_s >= 0.0 && n.linger_s.is_finite(), "network.linger_s must be >= 0")?;
        check(n.ack_every >= 1, "network.ack_every must be >= 1")
    }

    pub fn local(&self) -> LocalConfig {
        LocalConfig {
            window: self.window,
            cusum: self.cusum,
            segment: self.segment,
            voltage: self.voltage,
            trend: self.trend,
            floors: self.floors,
            freq_lambda: self.freq_lambda,
            ..LocalConfig::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            local: self.local(),
            central: self.central,
            align_window: self.network.align_window,
            keep_derived: false,
        }
    }

    pub fn central_serve(&self) -> CentralServeConfig {
        CentralServeConfig {
            codec: self.network.codec,
            central: self.central,
            align_window: self.network.align_window,
            grace: Duration::from_secs_f64(self.network.grace_s),
            ack_every: self.network.ack_every,
            ..CentralServeConfig::default()
        }
    }

    pub fn local_serve(&self, central: String) -> LocalServeConfig {
        LocalServeConfig {
            central,
            codec: self.network.codec,
            reconnect_every: Duration::from_millis(self.network.reconnect_ms),
            heartbeat: Duration::from_secs_f64(self.network.heartbeat_s),
            linger: Duration::from_secs_f64(self.network.linger_s),
            spool_dir: self.paths.spool.clone(),
            ..LocalServeConfig::default()
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it does not parse as one.
fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {text:?}")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad key in --set {text:?}")));
    }
    let mut at = table;
    for p in &parts[..parts.len() - 1] {
        let slot = at
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = slot
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {p} is not a table")))?;
    }
    at.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: &[&str]) -> Result<Config, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        Config::load(Some(&path), &o)
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(load("", &[]).unwrap(), Config::default());
    }

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load("windw = 3", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[cusum]\nhh = 3.0", &[]), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_win_over_the_file() {
        let c = load("[cusum]\nh = 4.0\n", &["cusum.h=7", "central.segment.t1=60", "network.codec=json"]).unwrap();
        assert_eq!(c.cusum.h, 7.0);
        assert_eq!(c.central.segment.t1, 60);
        assert_eq!(c.network.codec, Codec::Json);
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        assert!(matches!(load("[cusum]\nlambda = 1.5", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[segment]\nt1 = 300", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[voltage]\nsag = 1.2", &[]), Err(CliError::Config(_))));
    }

    #[test]
    fn malformed_override_is_a_usage_error() {
        assert!(matches!(load("", &["cusum.h"]), Err(CliError::Usage(_))));
    }
}
