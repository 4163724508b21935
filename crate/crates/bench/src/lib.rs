//! Shared fixtures for the benchmarks.

use phasorguard::synth::{generate, Generated};
use phasorguard::{bundled, FeederModel, Placement, SystemMatrix};

pub struct Fixture {
    pub feeder: FeederModel,
    pub system: SystemMatrix,
    pub placement: Placement,
    pub generated: Generated,
}

/// The bundled SLGF scenario on its feeder, generated once.
pub fn slgf() -> Fixture {
    let sc = bundled::scenario("slgf").expect("bundled scenario");
    let feeder = bundled::feeder(&sc.feeder).expect("bundled feeder");
    let generated = generate(&sc, &feeder).expect("scenario generates");
    Fixture {
        system: SystemMatrix::build(&feeder),
        placement: Placement::new(sc.sensors.iter().copied()).expect("distinct sensors"),
        feeder,
        generated,
    }
}
