//! Network service for the ground station: one simulation thread plus one
//! task per WebSocket client.

pub mod client;
mod clock;
mod server;
mod session;
mod sim_loop;
mod stats;

pub use clock::Clock;
pub use server::{load_world, run_server, start_server, ServerError, ServerHandle, ServerOptions};
pub use sim_loop::{attitude_quaternion, ingest_command, JoinInfo, Rejection, ScriptOutcome, SessionId};
pub use stats::{ServerStats, StatsSnapshot};
