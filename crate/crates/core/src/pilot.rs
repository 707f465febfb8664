//! Pilot intent: joystick velocity commands, flight modes, and the setpoint
//! generator that turns them into controller targets.
//!
//! The right stick commands a planar velocity in the vehicle's heading frame
//! (forward/left), other axes command climb rate and yaw rate. The commanded
//! velocity is integrated into a position target so that releasing the sticks
//! holds position.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{heading_vector, Setpoint};
use crate::dynamics::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightMode {
    /// On the ground, motors idle.
    Landed,
    TakingOff,
    Flying,
    Landing,
}

impl FlightMode {
    pub fn is_airborne(self) -> bool {
        !matches!(self, FlightMode::Landed)
    }
}

/// Joystick intent. `vx` is forward and `vy` is left, both in the heading
/// frame; `vz` is up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn is_centered(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.vz == 0.0 && self.yaw_rate == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.vz.is_finite() && self.yaw_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotCommand {
    Takeoff,
    Land,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("command not accepted in {mode:?} mode")]
    NotArmed { mode: FlightMode },
    #[error("command contains non-finite values")]
    NonFinite,
}

/// Velocity limits and takeoff/landing profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotLimits {
    /// m/s, applied to the planar speed and to |vz|.
    pub v_max: f64,
    /// rad/s
    pub yaw_rate_max: f64,
    /// m
    pub hover_altitude: f64,
    /// m/s
    pub climb_rate: f64,
    /// Descent speed per metre of altitude, 1/s.
    pub descent_gain: f64,
    /// m/s
    pub descent_rate_min: f64,
    /// m/s
    pub descent_rate_max: f64,
    /// Altitude at or below which a landing vehicle is on the ground, m.
    pub touchdown_height: f64,
}

impl Default for PilotLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            yaw_rate_max: 1.0,
            hover_altitude: 1.0,
            climb_rate: 0.5,
            descent_gain: 0.5,
            descent_rate_min: 0.1,
            descent_rate_max: 0.5,
            touchdown_height: 0.01,
        }
    }
}

impl PilotLimits {
    /// Clamps a raw command into the envelope. The planar part is limited by
    /// magnitude, so every world-frame component stays within `v_max` after
    /// rotation by the heading.
    pub fn clamp(&self, cmd: &VelocityCommand) -> VelocityCommand {
        let planar = Vector2::new(cmd.vx, cmd.vy);
        let speed = planar.norm();
        let planar = if speed > self.v_max {
            planar * (self.v_max / speed)
        } else {
            planar
        };
        VelocityCommand {
            vx: planar[0].clamp(-self.v_max, self.v_max),
            vy: planar[1].clamp(-self.v_max, self.v_max),
            vz: cmd.vz.clamp(-self.v_max, self.v_max),
            yaw_rate: cmd.yaw_rate.clamp(-self.yaw_rate_max, self.yaw_rate_max),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("v_max", self.v_max),
            ("yaw_rate_max", self.yaw_rate_max),
            ("hover_altitude", self.hover_altitude),
            ("climb_rate", self.climb_rate),
            ("descent_gain", self.descent_gain),
            ("descent_rate_min", self.descent_rate_min),
            ("descent_rate_max", self.descent_rate_max),
            ("touchdown_height", self.touchdown_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.descent_rate_min > self.descent_rate_max {
            return Err("descent_rate_min exceeds descent_rate_max".into());
        }
        Ok(())
    }
}

/// Stateful part of the command-to-setpoint mapping: the integrated position
/// target and the commanded heading.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointGenerator {
    limits: PilotLimits,
    position_target: Vector3<f64>,
    heading: Vector2<f64>,
}

impl SetpointGenerator {
    pub fn new(limits: PilotLimits, state: &VehicleState) -> Self {
        let mut gen = Self {
            limits,
            position_target: state.position,
            heading: Vector2::x(),
        };
        gen.reset(state);
        gen
    }

    pub fn limits(&self) -> &PilotLimits {
        &self.limits
    }

    pub fn position_target(&self) -> Vector3<f64> {
        self.position_target
    }

    pub fn heading(&self) -> Vector2<f64> {
        self.heading
    }

    /// Re-anchors the targets on the vehicle's current pose.
    pub fn reset(&mut self, state: &VehicleState) {
        self.position_target = state.position;
        if let Ok(h) = heading_vector(&state.attitude) {
            self.heading = Vector2::new(h[0], h[1]);
        }
    }

    /// Maps pilot intent to a velocity-tracking setpoint and advances the
    /// integrated targets by `dt`.
    ///
    /// Non-zero stick input is only valid while `Flying`; the takeoff and
    /// landing modes ignore the sticks and follow their own climb/descent
    /// profile.
    pub fn velocity_command_to_setpoint(
        &mut self,
        cmd: &VelocityCommand,
        state: &VehicleState,
        mode: FlightMode,
        dt: f64,
    ) -> Result<Setpoint, CommandError> {
        if !cmd.is_finite() {
            return Err(CommandError::NonFinite);
        }
        if !cmd.is_centered() && mode != FlightMode::Flying {
            return Err(CommandError::NotArmed { mode });
        }
        let cmd = self.limits.clamp(cmd);

        let mut velocity = Vector3::zeros();
        let mut yaw_rate = 0.0;
        match mode {
            FlightMode::Landed => {
                self.reset(state);
            }
            FlightMode::TakingOff => {
                let remaining = self.limits.hover_altitude - self.position_target[2];
                if remaining > 0.0 {
                    let climb = self.limits.climb_rate.min(remaining / dt);
                    velocity[2] = climb;
                }
            }
            FlightMode::Flying => {
                let forward = self.heading;
                let left = Vector2::new(-forward[1], forward[0]);
                let planar = forward * cmd.vx + left * cmd.vy;
                velocity = Vector3::new(planar[0], planar[1], cmd.vz);
                yaw_rate = cmd.yaw_rate;
            }
            FlightMode::Landing => {
                let altitude = state.position[2].max(0.0);
                velocity[2] = -(self.limits.descent_gain * altitude)
                    .clamp(self.limits.descent_rate_min, self.limits.descent_rate_max);
            }
        }

        self.position_target += velocity * dt;
        if mode == FlightMode::Landing {
            // Keep the target slightly below ground so the vehicle settles.
            self.position_target[2] = self.position_target[2].max(-self.limits.touchdown_height);
        }
        if yaw_rate != 0.0 {
            let (s, c) = (yaw_rate * dt).sin_cos();
            let h = self.heading;
            self.heading = Vector2::new(c * h[0] - s * h[1], s * h[0] + c * h[1]).normalize();
        }

        Ok(Setpoint {
            position_target: self.position_target,
            velocity_target: velocity,
            accel_feedforward: Vector3::zeros(),
            angular_velocity_target: Vector3::new(0.0, 0.0, yaw_rate),
            heading_target: Some(self.heading),
        })
    }
}

/// Flight-mode state machine plus the latest stick input.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilot {
    mode: FlightMode,
    stick: VelocityCommand,
    generator: SetpointGenerator,
}

impl Pilot {
    pub fn new(limits: PilotLimits, state: &VehicleState) -> Self {
        Self {
            mode: FlightMode::Landed,
            stick: VelocityCommand::default(),
            generator: SetpointGenerator::new(limits, state),
        }
    }

    pub fn mode(&self) -> FlightMode {
        self.mode
    }

    pub fn stick(&self) -> VelocityCommand {
        self.stick
    }

    pub fn limits(&self) -> &PilotLimits {
        self.generator.limits()
    }

    pub fn generator(&self) -> &SetpointGenerator {
        &self.generator
    }

    /// Applies a takeoff or land request.
    pub fn request(&mut self, cmd: PilotCommand, state: &VehicleState) -> Result<(), CommandError> {
        match (cmd, self.mode) {
            (PilotCommand::Takeoff, FlightMode::Landed) => {
                self.generator.reset(state);
                self.stick = VelocityCommand::default();
                self.mode = FlightMode::TakingOff;
                Ok(())
            }
            (PilotCommand::Land, FlightMode::Flying | FlightMode::TakingOff) => {
                self.generator.reset(state);
                self.stick = VelocityCommand::default();
                self.mode = FlightMode::Landing;
                Ok(())
            }
            (_, mode) => Err(CommandError::NotArmed { mode }),
        }
    }

    /// Stores new stick input, clamped. Returns the clamped command.
    pub fn set_velocity(&mut self, cmd: &VelocityCommand) -> Result<VelocityCommand, CommandError> {
        if !cmd.is_finite() {
            return Err(CommandError::NonFinite);
        }
        if self.mode != FlightMode::Flying {
            return Err(CommandError::NotArmed { mode: self.mode });
        }
        self.stick = self.generator.limits().clamp(cmd);
        Ok(self.stick)
    }

    /// Setpoint for the next control tick, with mode transitions driven by
    /// the vehicle state.
    pub fn setpoint(&mut self, state: &VehicleState, dt: f64) -> Setpoint {
        if self.mode == FlightMode::TakingOff {
            let limits = self.generator.limits();
            let target_reached = self.generator.position_target()[2] >= limits.hover_altitude;
            if target_reached
                && (state.position[2] - limits.hover_altitude).abs() < 0.05
                && state.velocity[2].abs() < 0.1
            {
                self.mode = FlightMode::Flying;
            }
        }
        let stick = if self.mode == FlightMode::Flying {
            self.stick
        } else {
            VelocityCommand::default()
        };
        self.generator
            .velocity_command_to_setpoint(&stick, state, self.mode, dt)
            .expect("stick input is validated on entry")
    }

    /// Marks the vehicle as on the ground.
    pub fn touchdown(&mut self, state: &VehicleState) {
        self.mode = FlightMode::Landed;
        self.stick = VelocityCommand::default();
        self.generator.reset(state);
    }
}
