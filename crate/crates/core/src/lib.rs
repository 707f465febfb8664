//! Core of the VR multicopter ground station: vehicle simulation, geometric
//! control, pilot command handling, simulated scanning and mapping, wire
//! codecs and latency telemetry.
//!
//! Everything here is synchronous and deterministic; the network service
//! lives in `vrgcs-server`.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod math;
pub mod pilot;
pub mod protocol;
pub mod scan;
pub mod sim;
pub mod telemetry;

pub use config::{ConfigError, ServerConfig};
pub use control::{control_step, ControlError, ControlOutput, ControllerMemory, GainSet, Setpoint};
pub use dynamics::{ControlInput, DynamicsError, VehicleParams, VehicleState};
pub use pilot::{CommandError, FlightMode, Pilot, PilotCommand, PilotLimits, VelocityCommand};
pub use protocol::{Envelope, LatencyProbe, PROTOCOL_VERSION};
pub use scan::{ChunkCoord, MeshChunk, VoxelMap, WorldModel};
pub use sim::{parse_script, ScriptCursor, ScriptEvent, ScriptRun, SimCommand, SimConfig, Simulation};
pub use telemetry::{
    evaluate_mission, latency_stats, LatencyLog, LatencyStats, MissionCriteria, MissionReport,
};
