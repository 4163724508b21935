//! Feeder topology, admittance assembly and the placement partition.

mod feeder;
mod reduce;
mod system;

pub use feeder::{Block, Bus, BusId, BusKind, FeederModel, LineId, LineSegment, PhaseMask};
pub use reduce::{reduce_laterals, Provenance};
pub use system::{ColumnKey, PartitionedSystem, Placement, Quantity, SystemMatrix, Units};

/// Parse and validate a feeder file.
pub fn load_feeder(path: impl AsRef<std::path::Path>) -> crate::Result<FeederModel> {
    FeederModel::load(path)
}

/// Assemble `Y` and `H` with the default unit convention.
pub fn build_system(feeder: &FeederModel) -> SystemMatrix {
    SystemMatrix::build(feeder)
}
