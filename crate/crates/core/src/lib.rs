//! Streaming anomaly detection for three-phase distribution feeders.
//!
//! The crate is organised after the two-stage monitoring hierarchy:
//!
//! * [`analytics`] runs next to each sensor. It turns a phasor stream into
//!   per-sample quantities, applies the local rules and segments violations
//!   into [`AnomalyReport`]s. It knows nothing about the grid.
//! * [`central`] fuses the streams of all sensors through the feeder
//!   admittance model and tracks a single subspace residual for changes.
//! * [`placement`] chooses sensor sites that keep that residual small in
//!   normal operation.
//!
//! [`model`] holds the feeder and its constraint matrix, [`synth`] produces
//! ground-truthed phasor streams, [`transport`] moves frames and reports
//! between processes and [`pipeline`] wires everything together offline.

pub mod analytics;
pub mod bundled;
pub mod central;
mod error;
pub mod linalg;
pub mod model;
pub mod phasor;
pub mod pipeline;
pub mod placement;
pub mod synth;
pub mod time;
pub mod transport;

pub use analytics::{AnomalyReport, EventEnd, Label, PhasorFrame, Rule};
pub use central::{CentralModel, EventLog};
pub use error::{Error, Result};
pub use model::{BusId, FeederModel, LineId, PartitionedSystem, Placement, SystemMatrix};
pub use phasor::{Complex64, Phasor3};
pub use placement::{PlacementResult, Solver};

/// Phasor reporting rate of the sensors, in samples per second.
pub const SAMPLE_RATE_HZ: f64 = 120.0;

/// Nominal system frequency.
pub const NOMINAL_HZ: f64 = 60.0;
