//! Synthetic, ground-truthed phasor streams from a feeder and a scenario.

mod csvio;
mod generate;
mod network;
mod scenario;

pub use csvio::{
    bus_from_file_name, check_header, parse_row, read_csv, read_dir_streams, sensor_file, write_csv, write_outputs, HEADER,
    TRUTH_FILE,
};
pub use generate::{
    apply_replay_attack, expected_rules, generate, roll_up_loads, GroundTruth, Generated, SensorStream, TruthEvent,
};
pub use scenario::{DriftSegment, Event, EventKind, LineRef, Load, Scenario};
