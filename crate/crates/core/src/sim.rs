//! Deterministic closed-loop simulation: pilot, controller, rigid body and
//! scanner stepped on one fixed clock.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{control_step, ControlOutput, ControllerMemory, GainSet, Setpoint};
use crate::dynamics::{
    self, euler_from_rotation, rotation_from_euler, DynamicsError, VehicleParams, VehicleState,
};
use crate::pilot::{CommandError, FlightMode, Pilot, PilotCommand, PilotLimits, VelocityCommand};
use crate::scan::{render_depth, ChunkCoord, DepthCameraSpec, Pose, VoxelMap, WorldModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: VehicleParams,
    pub gains: GainSet,
    pub limits: PilotLimits,
    pub camera: DepthCameraSpec,
    pub voxel_size: f64,
    /// Hz
    pub physics_rate: f64,
    /// Hz
    pub scan_rate: f64,
    pub start_position: Vector3<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: VehicleParams::default(),
            gains: GainSet::default(),
            limits: PilotLimits::default(),
            camera: DepthCameraSpec::default(),
            voxel_size: 0.1,
            physics_rate: 500.0,
            scan_rate: 10.0,
            start_position: Vector3::zeros(),
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.physics_rate
    }

    /// Physics ticks per scan, at least one.
    pub fn scan_interval(&self) -> u64 {
        ((self.physics_rate / self.scan_rate).round() as u64).max(1)
    }
}

/// Pilot input as delivered to the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimCommand {
    Velocity(VelocityCommand),
    Pilot(PilotCommand),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// What happened during one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    /// Chunks whose revision changed, if a scan ran.
    pub dirty_chunks: BTreeSet<ChunkCoord>,
    pub scanned: bool,
    /// Set on the tick the vehicle touched down, holding the state just before
    /// it was put to rest.
    pub touchdown: Option<VehicleState>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    world: WorldModel,
    state: VehicleState,
    pilot: Pilot,
    memory: ControllerMemory,
    map: VoxelMap,
    tick: u64,
    last_setpoint: Option<Setpoint>,
    last_output: Option<ControlOutput>,
}

impl Simulation {
    pub fn new(config: SimConfig, world: WorldModel) -> Self {
        let state = VehicleState::at_rest(config.start_position);
        let pilot = Pilot::new(config.limits.clone(), &state);
        let map = VoxelMap::new(config.voxel_size);
        Self {
            config,
            world,
            state,
            pilot,
            memory: ControllerMemory::default(),
            map,
            tick: 0,
            last_setpoint: None,
            last_output: None,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn mode(&self) -> FlightMode {
        self.pilot.mode()
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Setpoint used on the most recent airborne tick.
    pub fn last_setpoint(&self) -> Option<&Setpoint> {
        self.last_setpoint.as_ref()
    }

    pub fn last_output(&self) -> Option<&ControlOutput> {
        self.last_output.as_ref()
    }

    /// Applies pilot input. Velocity commands are clamped; the clamped
    /// command is returned.
    pub fn apply(&mut self, cmd: SimCommand) -> Result<Option<VelocityCommand>, CommandError> {
        match cmd {
            SimCommand::Velocity(v) => self.pilot.set_velocity(&v).map(Some),
            SimCommand::Pilot(p) => self.pilot.request(p, &self.state).map(|_| None),
        }
    }

    /// Advances one physics tick.
    pub fn step(&mut self) -> Result<TickReport, SimError> {
        let dt = self.config.dt();
        let mut report = TickReport::default();
        self.tick += 1;
        let time = self.tick as f64 * dt;

        if !self.pilot.mode().is_airborne() {
            self.state.time = time;
            return Ok(report);
        }

        let sp = self.pilot.setpoint(&self.state, dt);
        let (out, memory) = control_step(
            &self.state,
            &sp,
            &self.config.gains,
            &self.config.params,
            &self.memory,
        );
        self.memory = memory;
        self.last_setpoint = Some(sp);
        self.last_output = Some(out);

        let mut next = dynamics::step(&self.state, &out.input, &self.config.params, dt)?;
        next.time = time;
        if next.position[2] < 0.0 {
            // Ground contact: no penetration, no downward motion.
            next.position[2] = 0.0;
            next.velocity[2] = next.velocity[2].max(0.0);
        }
        self.state = next;

        let limits = self.pilot.limits();
        if self.pilot.mode() == FlightMode::Landing && self.state.position[2] <= limits.touchdown_height {
            report.touchdown = Some(self.state);
            self.settle_on_ground();
        } else if self.tick.is_multiple_of(self.config.scan_interval()) {
            report.dirty_chunks = self.scan();
            report.scanned = true;
        }
        Ok(report)
    }

    fn settle_on_ground(&mut self) {
        let yaw = euler_from_rotation(&self.state.attitude)[2];
        let mut rest =
            VehicleState::at_rest(Vector3::new(self.state.position[0], self.state.position[1], 0.0));
        rest.attitude = rotation_from_euler(0.0, 0.0, yaw);
        rest.time = self.state.time;
        self.state = rest;
        self.memory = ControllerMemory::default();
        self.pilot.touchdown(&self.state);
    }

    /// Renders one depth frame from the current pose and integrates it.
    pub fn scan(&mut self) -> BTreeSet<ChunkCoord> {
        let pose = Pose::of_vehicle(&self.state).compose(&self.config.camera.mount);
        let image = render_depth(&self.world, &pose, &self.config.camera, self.state.time);
        self.map.integrate_scan(&image)
    }

    /// Runs a command script. Stops once every event has been applied and the
    /// vehicle is on the ground, or at `max_time` seconds.
    pub fn run_script(&mut self, script: &[ScriptEvent], max_time: f64) -> Result<ScriptRun, SimError> {
        let mut run = ScriptRun {
            trajectory: vec![self.state],
            ..Default::default()
        };
        let mut cursor = ScriptCursor::new(script.to_vec());
        let end_tick = (max_time * self.config.physics_rate).round() as u64;
        while self.tick < end_tick {
            let now = self.tick as f64 * self.config.dt();
            for ev in cursor.due(now) {
                if let Err(e) = self.apply(ev.command) {
                    run.rejected.push((ev, e));
                }
            }
            let report = self.step()?;
            if let Some(td) = report.touchdown {
                run.trajectory.push(td);
                run.touchdowns += 1;
            }
            run.trajectory.push(self.state);
            run.scans += usize::from(report.scanned);
            if cursor.is_done() && !self.mode().is_airborne() && run.touchdowns > 0 {
                break;
            }
        }
        Ok(run)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptRun {
    /// One state per tick, plus the touchdown state ahead of the settled one.
    pub trajectory: Vec<VehicleState>,
    pub rejected: Vec<(ScriptEvent, CommandError)>,
    pub scans: usize,
    pub touchdowns: usize,
}

/// Hands out script events as simulated time reaches them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptCursor {
    events: Vec<ScriptEvent>,
    next: usize,
}

impl ScriptCursor {
    pub fn new(events: Vec<ScriptEvent>) -> Self {
        Self { events, next: 0 }
    }

    /// Events due at `now` seconds. An event fires on the first tick at or
    /// after its time.
    pub fn due(&mut self, now: f64) -> Vec<ScriptEvent> {
        let start = self.next;
        while self.events.get(self.next).is_some_and(|e| e.time <= now + 1e-9) {
            self.next += 1;
        }
        self.events[start..self.next].to_vec()
    }

    pub fn is_done(&self) -> bool {
        self.next == self.events.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// s
    pub time: f64,
    pub command: SimCommand,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

/// Parses a command script. Each non-blank line is one of
/// `t_s cmd_vel vx vy vz yaw_rate`, `t_s takeoff` or `t_s land`; `#` starts
/// a comment. Times must not decrease.
pub fn parse_script(text: &str) -> Result<Vec<ScriptEvent>, ScriptError> {
    let mut events: Vec<ScriptEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ScriptError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let num = |s: &str| -> Result<f64, ScriptError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad number {s:?}")))
        };
        let time = num(tokens[0])?;
        if time < 0.0 {
            return Err(err("negative time".into()));
        }
        if events.last().is_some_and(|e| e.time > time) {
            return Err(err("times must not decrease".into()));
        }
        let command = match (tokens.get(1).copied(), tokens.len()) {
            (Some("takeoff"), 2) => SimCommand::Pilot(PilotCommand::Takeoff),
            (Some("land"), 2) => SimCommand::Pilot(PilotCommand::Land),
            (Some("cmd_vel"), 6) => SimCommand::Velocity(VelocityCommand {
                vx: num(tokens[2])?,
                vy: num(tokens[3])?,
                vz: num(tokens[4])?,
                yaw_rate: num(tokens[5])?,
            }),
            (Some(kw @ ("takeoff" | "land" | "cmd_vel")), _) => {
                return Err(err(format!("wrong number of arguments for {kw}")))
            }
            (Some(other), _) => return Err(err(format!("unknown command {other:?}"))),
            (None, _) => return Err(err("missing command".into())),
        };
        events.push(ScriptEvent { time, command });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_script() {
        let events = parse_script("# mission\n0 takeoff\n\n4.5 cmd_vel 1 0 0 0.1  # go\n9 land\n").unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].command, SimCommand::Pilot(PilotCommand::Takeoff));
        assert_eq!(
            events[1].command,
            SimCommand::Velocity(VelocityCommand {
                vx: 1.0,
                vy: 0.0,
                vz: 0.0,
                yaw_rate: 0.1
            })
        );
        assert_eq!(events[2].time, 9.0);
    }

    #[test]
    fn script_errors() {
        assert_eq!(parse_script("1 land\n0 takeoff").unwrap_err().line, 2);
        assert!(parse_script("0 hover").is_err());
        assert!(parse_script("0 cmd_vel 1 0").is_err());
        assert!(parse_script("x takeoff").is_err());
        assert!(parse_script("0 land extra").is_err());
        assert!(parse_script("-1 land").is_err());
    }

    #[test]
    fn landed_vehicle_stays_put() {
        let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
        for _ in 0..100 {
            let r = sim.step().unwrap();
            assert!(!r.scanned);
        }
        assert_eq!(sim.state().position, Vector3::zeros());
        assert!((sim.state().time - 0.2).abs() < 1e-12);
        assert!(matches!(
            sim.apply(SimCommand::Velocity(VelocityCommand::default())),
            Err(CommandError::NotArmed { .. })
        ));
    }

    #[test]
    fn takeoff_hover_land() {
        let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
        let script = parse_script("0 takeoff\n5 land").unwrap();
        let run = sim.run_script(&script, 20.0).unwrap();
        assert!(run.rejected.is_empty());
        assert_eq!(run.touchdowns, 1);
        assert_eq!(sim.mode(), FlightMode::Landed);
        let before_land = run.trajectory.iter().rfind(|s| s.time <= 4.99).unwrap();
        assert!(
            (before_land.position[2] - 1.0).abs() < 0.02,
            "{:?}",
            before_land.position
        );
        let peak = run.trajectory.iter().map(|s| s.position[2]).fold(0.0, f64::max);
        assert!(peak < 1.2, "{peak}");
        assert!(run.scans > 0);
        assert!(sim.map().chunk_count() > 0);
    }
}
