//! Feeders and scenarios shipped with the crate.

use std::path::Path;

use crate::model::FeederModel;
use crate::synth::Scenario;
use crate::{Error, Result};

pub const FEEDERS: &[(&str, &str)] = &[
    ("ieee34", include_str!("../data/ieee34.feeder")),
    ("ieee123", include_str!("../data/ieee123.feeder")),
];

pub const SCENARIOS: &[(&str, &str)] = &[
    ("steady", include_str!("../data/scenarios/steady.json")),
    ("drift", include_str!("../data/scenarios/drift.json")),
    ("slgf", include_str!("../data/scenarios/slgf.json")),
    ("load-loss", include_str!("../data/scenarios/load-loss.json")),
    ("replay-minor", include_str!("../data/scenarios/replay-minor.json")),
    ("replay-dominant", include_str!("../data/scenarios/replay-dominant.json")),
    ("replay-two", include_str!("../data/scenarios/replay-two.json")),
];

fn lookup<'a>(table: &'a [(&str, &str)], name: &str) -> Option<&'a str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// A bundled feeder by name, or a feeder file path.
pub fn feeder(name_or_path: &str) -> Result<FeederModel> {
    match lookup(FEEDERS, name_or_path) {
        Some(text) => FeederModel::from_json(text),
        None if Path::new(name_or_path).exists() => FeederModel::load(name_or_path),
        None => Err(Error::Feeder(format!(
            "{name_or_path:?} is neither a bundled feeder ({}) nor a file",
            FEEDERS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// A bundled scenario by name, or a scenario file path.
pub fn scenario(name_or_path: &str) -> Result<Scenario> {
    match lookup(SCENARIOS, name_or_path) {
        Some(text) => Scenario::from_json(text),
        None if Path::new(name_or_path).exists() => Scenario::load(name_or_path),
        None => Err(Error::Scenario(format!(
            "{name_or_path:?} is neither a bundled scenario ({}) nor a file",
            SCENARIOS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ))),
    }
}
