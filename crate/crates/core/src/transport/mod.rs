//! Wire protocol and process harness between sensor-side engines and the
//! central engine, plus paced CSV replay.

mod central;
mod codec;
mod local;
mod replay;
mod session;

pub use central::{CentralRun, CentralServeConfig, CentralServer, DEFAULT_PORT};
pub use codec::{
    decode, decode_json, encode, encode_json, read_message, write_message, Body, Codec, CodecError, Kind, Message,
    MAX_MESSAGE, VERSION,
};
pub use local::{read_spool, serve_local, FaultInjection, LocalRun, LocalServeConfig};
pub use replay::{replay_csv, CsvReplay};
pub use session::{Connection, FrameStatus, SensorSession, SessionState};
