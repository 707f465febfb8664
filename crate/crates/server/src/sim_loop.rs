//! The authoritative simulation thread. It owns the vehicle, the map and the
//! session registry; session tasks talk to it only through queues.

use std::collections::BTreeMap;
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, UnitQuaternion};
use tokio::sync::{mpsc::UnboundedSender, oneshot};
use tracing::{debug, info, warn};

use vrgcs_core::pilot::{CommandError, FlightMode, PilotCommand, VelocityCommand};
use vrgcs_core::protocol::{
    encode_frame, encode_mesh_chunk, encode_message, ChunkRef, Envelope, PROTOCOL_VERSION,
};
use vrgcs_core::scan::{extract_chunk_mesh, ChunkCoord};
use vrgcs_core::sim::{ScriptCursor, ScriptEvent, SimCommand, Simulation};
use vrgcs_core::telemetry::LatencyLog;
use vrgcs_core::VehicleState;

use crate::clock::Clock;
use crate::stats::ServerStats;

pub type SessionId = u64;

/// Values sent from the simulation thread to one session.
#[derive(Debug, Clone)]
pub(crate) enum Outbound {
    Text(String),
    Pose {
        t_ns: u64,
        p: [f64; 3],
        q: [f64; 4],
    },
    Chunk {
        coords: [i32; 3],
        revision: u32,
        /// Length-prefixed MSH1 payload.
        frame: Arc<Vec<u8>>,
    },
}

pub(crate) enum SimInput {
    Join {
        session: SessionId,
        tx: UnboundedSender<Outbound>,
        reply: oneshot::Sender<JoinInfo>,
    },
    Leave {
        session: SessionId,
    },
    Command {
        session: SessionId,
        env: Envelope,
    },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinInfo {
    pub authority: bool,
}

/// Why a pilot command was refused.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    NoAuthority,
    NotArmed(FlightMode),
    Invalid(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::NoAuthority => write!(f, "no-authority"),
            Rejection::NotArmed(mode) => write!(f, "not-armed ({mode:?})"),
            Rejection::Invalid(why) => write!(f, "invalid: {why}"),
        }
    }
}

/// Applies a decoded envelope from a session. Only the authority may pilot;
/// velocities are clamped to the configured limits. Returns the clamped
/// velocity for `cmd_vel`.
pub fn ingest_command(
    sim: &mut Simulation,
    has_authority: bool,
    env: &Envelope,
) -> Result<Option<VelocityCommand>, Rejection> {
    let cmd = match env {
        Envelope::CmdVel(v) => SimCommand::Velocity(*v),
        Envelope::Takeoff => SimCommand::Pilot(PilotCommand::Takeoff),
        Envelope::Land => SimCommand::Pilot(PilotCommand::Land),
        other => {
            return Err(Rejection::Invalid(format!(
                "{} is not a command",
                other.type_name()
            )))
        }
    };
    if !has_authority {
        return Err(Rejection::NoAuthority);
    }
    sim.apply(cmd).map_err(|e| match e {
        CommandError::NotArmed { mode } => Rejection::NotArmed(mode),
        CommandError::NonFinite => Rejection::Invalid(e.to_string()),
    })
}

/// Unit quaternion (w, x, y, z) of a rotation matrix, with w ≥ 0.
pub fn attitude_quaternion(state: &VehicleState) -> [f64; 4] {
    let r = Rotation3::from_matrix_unchecked(state.attitude);
    let q = UnitQuaternion::from_rotation_matrix(&r);
    let (w, v) = (q.w, q.imag());
    let s = if w < 0.0 { -1.0 } else { 1.0 };
    [s * w, s * v[0], s * v[1], s * v[2]]
}

/// Result of a scripted headless run.
#[derive(Debug, Clone)]
pub struct ScriptOutcome {
    pub trajectory: Vec<VehicleState>,
    pub rejected: Vec<(ScriptEvent, CommandError)>,
    /// True if the run stopped on the time limit rather than after landing.
    pub timed_out: bool,
}

pub(crate) struct ScriptState {
    pub cursor: ScriptCursor,
    pub max_time: f64,
    pub done: Option<oneshot::Sender<ScriptOutcome>>,
}

struct SessionLink {
    tx: UnboundedSender<Outbound>,
    /// Latest revision sent per chunk.
    sent: BTreeMap<ChunkCoord, u32>,
}

pub(crate) struct SimLoop {
    pub sim: Simulation,
    pub world_name: String,
    pub viewer_offset_m: [f64; 3],
    pub pose_rate: f64,
    pub fast: bool,
    pub clock: Clock,
    pub stats: Arc<ServerStats>,
    pub log: Arc<Mutex<LatencyLog>>,
    pub script: Option<ScriptState>,
    sessions: BTreeMap<SessionId, SessionLink>,
    /// Join order, for handing authority on.
    join_order: Vec<SessionId>,
    authority: Option<SessionId>,
    cache: BTreeMap<ChunkCoord, (u32, Arc<Vec<u8>>)>,
    trajectory: Vec<VehicleState>,
    script_rejected: Vec<(ScriptEvent, CommandError)>,
    touchdowns: usize,
    mapping_since: Option<u64>,
}

impl SimLoop {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sim: Simulation,
        world_name: String,
        viewer_offset_m: [f64; 3],
        pose_rate: f64,
        fast: bool,
        clock: Clock,
        stats: Arc<ServerStats>,
        log: Arc<Mutex<LatencyLog>>,
        script: Option<ScriptState>,
    ) -> Self {
        let trajectory = vec![*sim.state()];
        Self {
            sim,
            world_name,
            viewer_offset_m,
            pose_rate,
            fast,
            clock,
            stats,
            log,
            script,
            sessions: BTreeMap::new(),
            join_order: Vec::new(),
            authority: None,
            cache: BTreeMap::new(),
            trajectory,
            script_rejected: Vec::new(),
            touchdowns: 0,
            mapping_since: None,
        }
    }

    pub fn run(mut self, inputs: Receiver<SimInput>) {
        let dt = self.sim.config().dt();
        let pose_every = ((self.sim.config().physics_rate / self.pose_rate).round() as u64).max(1);
        let mut paced = !self.fast;
        // Wall instant and tick that pacing is measured from.
        let mut origin = (Instant::now(), 0u64);
        info!(fast = self.fast, "simulation started");

        'outer: loop {
            loop {
                match inputs.try_recv() {
                    Ok(SimInput::Shutdown) | Err(TryRecvError::Disconnected) => break 'outer,
                    Ok(input) => self.handle(input),
                    Err(TryRecvError::Empty) => break,
                }
            }

            self.play_script();
            let report = match self.sim.step() {
                Ok(r) => r,
                Err(e) => {
                    warn!("simulation halted: {e}");
                    break;
                }
            };
            if self.script.as_ref().is_some_and(|s| s.done.is_some()) {
                if let Some(td) = report.touchdown {
                    self.trajectory.push(td);
                    self.touchdowns += 1;
                }
                self.trajectory.push(*self.sim.state());
            }
            self.track_mapping();
            for coords in &report.dirty_chunks {
                self.publish_chunk(*coords);
            }
            let tick = self.sim.tick_count();
            if tick.is_multiple_of(pose_every) {
                self.broadcast_pose();
            }
            if self.finish_script() && !paced {
                // Fast mode covers the scripted part only; afterwards the
                // simulation idles at wall-clock rate.
                paced = true;
                origin = (Instant::now(), tick);
            }

            if paced {
                let target = origin.0 + Duration::from_secs_f64((tick - origin.1) as f64 * dt);
                let now = Instant::now();
                if target > now {
                    std::thread::sleep(target - now);
                }
            }
        }
        self.close_mapping();
        info!("simulation stopped");
    }

    fn handle(&mut self, input: SimInput) {
        match input {
            SimInput::Join { session, tx, reply } => {
                let authority = self.authority.is_none();
                if authority {
                    self.authority = Some(session);
                }
                let mut link = SessionLink {
                    tx,
                    sent: BTreeMap::new(),
                };
                let hello = Envelope::Hello {
                    protocol_version: PROTOCOL_VERSION,
                    world_name: self.world_name.clone(),
                    chunk_list: self
                        .cache
                        .iter()
                        .map(|(c, (rev, _))| ChunkRef {
                            coords: c.0,
                            revision: *rev,
                        })
                        .collect(),
                    viewer_offset_m: self.viewer_offset_m,
                };
                let mut ok = link.tx.send(Outbound::Text(encode_message(&hello))).is_ok();
                // Late-joiner catch-up: every chunk at its latest revision.
                for (coords, (rev, frame)) in &self.cache {
                    ok &= link
                        .tx
                        .send(Outbound::Chunk {
                            coords: coords.0,
                            revision: *rev,
                            frame: frame.clone(),
                        })
                        .is_ok();
                    link.sent.insert(*coords, *rev);
                    ServerStats::bump(&self.stats.chunks_sent);
                }
                let _ = reply.send(JoinInfo { authority });
                if ok {
                    debug!(session, authority, chunks = self.cache.len(), "session joined");
                    self.sessions.insert(session, link);
                    self.join_order.push(session);
                } else {
                    self.drop_session(session);
                }
            }
            SimInput::Leave { session } => self.drop_session(session),
            SimInput::Command { session, env } => {
                let has_authority = self.authority == Some(session);
                match ingest_command(&mut self.sim, has_authority, &env) {
                    Ok(_) => ServerStats::bump(&self.stats.commands_accepted),
                    Err(r) => {
                        debug!(session, "command {} rejected: {r}", env.type_name());
                        ServerStats::bump(match r {
                            Rejection::NoAuthority => &self.stats.rejected_no_authority,
                            Rejection::NotArmed(_) => &self.stats.rejected_not_armed,
                            Rejection::Invalid(_) => &self.stats.rejected_invalid,
                        });
                    }
                }
            }
            SimInput::Shutdown => {}
        }
    }

    fn drop_session(&mut self, session: SessionId) {
        self.sessions.remove(&session);
        self.join_order.retain(|s| *s != session);
        if self.authority == Some(session) {
            // The longest-connected remaining session takes over.
            self.authority = self.join_order.first().copied();
            debug!(session, next = ?self.authority, "authority released");
        }
    }

    fn play_script(&mut self) {
        let Some(script) = self.script.as_mut() else {
            return;
        };
        if script.done.is_none() {
            return;
        }
        let now = self.sim.tick_count() as f64 * self.sim.config().dt();
        for ev in script.cursor.due(now) {
            if let Err(e) = self.sim.apply(ev.command) {
                warn!("script command at {} s rejected: {e}", ev.time);
                self.script_rejected.push((ev, e));
            }
        }
    }

    /// Reports the scripted run once it is over. Returns true on the tick
    /// the outcome is sent.
    fn finish_script(&mut self) -> bool {
        let Some(script) = self.script.as_mut() else {
            return false;
        };
        if script.done.is_none() {
            return false;
        }
        let now = self.sim.tick_count() as f64 * self.sim.config().dt();
        let landed = script.cursor.is_done() && self.touchdowns > 0 && !self.sim.mode().is_airborne();
        let timed_out = now >= script.max_time;
        if !(landed || timed_out) {
            return false;
        }
        let outcome = ScriptOutcome {
            trajectory: std::mem::take(&mut self.trajectory),
            rejected: std::mem::take(&mut self.script_rejected),
            timed_out: !landed,
        };
        if let Some(done) = script.done.take() {
            let _ = done.send(outcome);
        }
        info!(sim_time = now, landed, "script finished");
        true
    }

    fn track_mapping(&mut self) {
        let scanning = self.sim.mode().is_airborne();
        match (scanning, self.mapping_since) {
            (true, None) => self.mapping_since = Some(self.clock.now_ns()),
            (false, Some(_)) => self.close_mapping(),
            _ => {}
        }
    }

    fn close_mapping(&mut self) {
        if let Some(start) = self.mapping_since.take() {
            let end = self.clock.now_ns().max(start + 1);
            let mut log = self.log.lock().expect("latency log poisoned");
            if let Err(e) = log.add_mapping_interval(start, end) {
                warn!("mapping interval not recorded: {e}");
            }
        }
    }

    fn publish_chunk(&mut self, coords: ChunkCoord) {
        let mesh = match extract_chunk_mesh(self.sim.map(), coords) {
            Ok(m) => m,
            Err(e) => {
                warn!("{e}");
                return;
            }
        };
        let revision = mesh.revision;
        let frame = Arc::new(encode_frame(&encode_mesh_chunk(&mesh)));
        self.cache.insert(coords, (revision, frame.clone()));
        let mut dead = Vec::new();
        for (id, link) in &mut self.sessions {
            let msg = Outbound::Chunk {
                coords: coords.0,
                revision,
                frame: frame.clone(),
            };
            if link.tx.send(msg).is_err() {
                dead.push(*id);
            } else {
                let previous = link.sent.insert(coords, revision);
                debug_assert!(previous.is_none_or(|p| p < revision), "revision went backwards");
                ServerStats::bump(&self.stats.chunks_sent);
            }
        }
        for id in dead {
            self.drop_session(id);
        }
    }

    fn broadcast_pose(&mut self) {
        let state = self.sim.state();
        let t_ns = (self.sim.tick_count() as f64 * self.sim.config().dt() * 1e9).round() as u64;
        let p = [state.position[0], state.position[1], state.position[2]];
        let q = attitude_quaternion(state);
        let mut dead = Vec::new();
        for (id, link) in &self.sessions {
            if link.tx.send(Outbound::Pose { t_ns, p, q }).is_err() {
                dead.push(*id);
            } else {
                ServerStats::bump(&self.stats.poses_sent);
            }
        }
        for id in dead {
            self.drop_session(id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vrgcs_core::dynamics::rotation_from_euler;
    use vrgcs_core::{SimConfig, WorldModel};

    #[test]
    fn authority_and_clamping() {
        let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
        let fast = Envelope::CmdVel(VelocityCommand {
            vx: 5.0,
            ..Default::default()
        });
        assert_eq!(
            ingest_command(&mut sim, false, &Envelope::Takeoff),
            Err(Rejection::NoAuthority)
        );
        assert_eq!(
            ingest_command(&mut sim, true, &fast),
            Err(Rejection::NotArmed(FlightMode::Landed))
        );
        assert_eq!(ingest_command(&mut sim, true, &Envelope::Takeoff), Ok(None));
        assert_eq!(
            ingest_command(&mut sim, true, &Envelope::Takeoff),
            Err(Rejection::NotArmed(FlightMode::TakingOff))
        );
        while sim.mode() != FlightMode::Flying {
            sim.step().unwrap();
        }
        let clamped = ingest_command(&mut sim, true, &fast).unwrap().unwrap();
        assert_eq!(clamped.vx, 1.0);
        assert_eq!(
            ingest_command(&mut sim, false, &fast),
            Err(Rejection::NoAuthority)
        );
        assert!(matches!(
            ingest_command(&mut sim, true, &Envelope::Ping { id: 1, t_tx_ns: 0 }),
            Err(Rejection::Invalid(_))
        ));
    }

    #[test]
    fn quaternion_of_yaw() {
        let mut s = VehicleState::at_rest(Default::default());
        s.attitude = rotation_from_euler(0.0, 0.0, 1.0);
        let q = attitude_quaternion(&s);
        let expected = [0.5f64.cos(), 0.0, 0.0, 0.5f64.sin()];
        for i in 0..4 {
            assert!((q[i] - expected[i]).abs() < 1e-12);
        }
        s.attitude = rotation_from_euler(0.0, 0.0, 3.0);
        assert!(attitude_quaternion(&s)[0] >= 0.0);
    }
}
