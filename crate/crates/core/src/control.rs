//! Cascaded position and geometric attitude controller.
//!
//! The outer loop turns position/velocity errors into a desired force. Its
//! direction fixes the desired thrust axis, the heading vector fixes yaw, and
//! the inner loop drives the rotation error on SO(3) to zero with a PD law on
//! the attitude error and body-rate error.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::math::{skew_residual, vee_unchecked};

/// Minimum horizontal projection of c1 for the heading vector to exist.
pub const HEADING_EPS: f64 = 1e-6;
/// Minimum force magnitude (N) for the desired frame to exist.
pub const FORCE_EPS: f64 = 1e-6;
/// Skew-symmetry tolerance accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("body forward axis is vertical; heading undefined")]
    DegenerateHeading,
    #[error("desired force magnitude {0} N is below threshold")]
    DegenerateForce(f64),
    #[error("heading is parallel to the desired thrust axis")]
    DegenerateCross,
    #[error("matrix is not skew-symmetric (residual {0})")]
    NotSkew(f64),
    #[error("invalid gain set: {0}")]
    InvalidGains(String),
    #[error("invalid setpoint: {0}")]
    InvalidSetpoint(String),
}

/// Targets consumed by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub position_target: Vector3<f64>,
    pub velocity_target: Vector3<f64>,
    pub accel_feedforward: Vector3<f64>,
    /// Body frame.
    pub angular_velocity_target: Vector3<f64>,
    /// Desired horizontal heading; `None` holds the current one.
    pub heading_target: Option<Vector2<f64>>,
}

impl Setpoint {
    /// Hold `position` with zero velocity, current heading.
    pub fn hold(position: Vector3<f64>) -> Self {
        Self {
            position_target: position,
            velocity_target: Vector3::zeros(),
            accel_feedforward: Vector3::zeros(),
            angular_velocity_target: Vector3::zeros(),
            heading_target: None,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let finite = self.position_target.iter().all(|v| v.is_finite())
            && self.velocity_target.iter().all(|v| v.is_finite())
            && self.accel_feedforward.iter().all(|v| v.is_finite())
            && self.angular_velocity_target.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ControlError::InvalidSetpoint("non-finite target".into()));
        }
        if let Some(h) = self.heading_target {
            if (h.norm() - 1.0).abs() > 1e-9 {
                return Err(ControlError::InvalidSetpoint(
                    "heading target must be a unit vector".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Controller gains.
///
/// Field names follow what each gain multiplies: the force law applies the
/// velocity-error gain to `ṙ − ṙ_T` and the position-error gain to `r − r_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub gain_velocity_error: Matrix3<f64>,
    pub gain_position_error: Matrix3<f64>,
    pub gain_attitude: Matrix3<f64>,
    pub gain_body_rate: Matrix3<f64>,
}

impl Default for GainSet {
    fn default() -> Self {
        Self {
            gain_velocity_error: Matrix3::from_diagonal(&Vector3::new(5.0, 5.0, 6.0)),
            gain_position_error: Matrix3::from_diagonal(&Vector3::new(8.0, 8.0, 10.0)),
            gain_attitude: Matrix3::from_diagonal(&Vector3::new(4.0, 4.0, 1.5)),
            gain_body_rate: Matrix3::from_diagonal(&Vector3::new(0.8, 0.8, 0.4)),
        }
    }
}

impl GainSet {
    pub fn validate(&self) -> Result<(), ControlError> {
        fn positive_definite(m: &Matrix3<f64>) -> bool {
            (m - m.transpose()).amax() <= 1e-12 && m.symmetric_eigenvalues().iter().all(|&e| e > 0.0)
        }
        fn positive_diagonal(m: &Matrix3<f64>) -> bool {
            let off = m - Matrix3::from_diagonal(&m.diagonal());
            off.amax() == 0.0 && m.diagonal().iter().all(|&d| d > 0.0)
        }
        let checks = [
            (
                "gain_velocity_error",
                positive_definite(&self.gain_velocity_error),
            ),
            (
                "gain_position_error",
                positive_definite(&self.gain_position_error),
            ),
            ("gain_attitude", positive_diagonal(&self.gain_attitude)),
            ("gain_body_rate", positive_diagonal(&self.gain_body_rate)),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(ControlError::InvalidGains(format!(
                "{name} must be positive definite (diagonal for attitude gains)"
            ))),
            None => Ok(()),
        }
    }
}

/// Fallback values carried between ticks for the degenerate cases.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControllerMemory {
    pub last_desired_attitude: Option<Matrix3<f64>>,
    pub last_heading: Option<Vector3<f64>>,
}

/// Intermediate quantities of one controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub input: ControlInput,
    pub desired_force: Vector3<f64>,
    pub desired_attitude: Matrix3<f64>,
    pub attitude_error: Vector3<f64>,
}

/// `F = −K_vel(ṙ − ṙ_T) − K_pos(r − r_T) + m·g·e3 + m·r̈_T`.
pub fn desired_force(
    state: &VehicleState,
    sp: &Setpoint,
    gains: &GainSet,
    params: &VehicleParams,
) -> Vector3<f64> {
    -gains.gain_velocity_error * (state.velocity - sp.velocity_target)
        - gains.gain_position_error * (state.position - sp.position_target)
        + Vector3::z() * (params.mass * params.gravity)
        + sp.accel_feedforward * params.mass
}

/// Projection of the desired force on the current thrust axis, clamped to
/// `[0, thrust_max]`.
pub fn desired_thrust(force: &Vector3<f64>, attitude: &Matrix3<f64>, thrust_max: f64) -> f64 {
    force.dot(&attitude.column(2)).clamp(0.0, thrust_max)
}

/// Unit horizontal projection of the body forward axis.
pub fn heading_vector(attitude: &Matrix3<f64>) -> Result<Vector3<f64>, ControlError> {
    let c1 = attitude.column(0);
    let horizontal = Vector3::new(c1[0], c1[1], 0.0);
    let norm = horizontal.norm();
    if norm < HEADING_EPS {
        return Err(ControlError::DegenerateHeading);
    }
    Ok(horizontal / norm)
}

/// Desired body frame whose thrust axis is along `force` and whose forward
/// axis follows `heading`.
pub fn desired_frame(force: &Vector3<f64>, heading: &Vector3<f64>) -> Result<Matrix3<f64>, ControlError> {
    let magnitude = force.norm();
    if magnitude < FORCE_EPS {
        return Err(ControlError::DegenerateForce(magnitude));
    }
    let c3 = force / magnitude;
    let raw_c1 = Vector3::z().cross(heading).cross(&c3);
    let raw_norm = raw_c1.norm();
    if raw_norm < FORCE_EPS {
        return Err(ControlError::DegenerateCross);
    }
    let c1 = raw_c1 / raw_norm;
    let c2 = c3.cross(&c1);
    Ok(Matrix3::from_columns(&[c1, c2, c3]))
}

/// Vector of a skew-symmetric matrix.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, ControlError> {
    let residual = skew_residual(m);
    if !(residual <= SKEW_TOL) {
        return Err(ControlError::NotSkew(residual));
    }
    Ok(vee_unchecked(m))
}

/// `e_R = ½ (S_desᵀS − SᵀS_des)^∨`.
pub fn attitude_error(attitude: &Matrix3<f64>, desired: &Matrix3<f64>) -> Vector3<f64> {
    let m = desired.transpose() * attitude - attitude.transpose() * desired;
    vee_unchecked(&m) * 0.5
}

/// `T = −K_R e_R − K_ω (Ω − Ω_T)`, clamped per axis to `torque_max`.
pub fn desired_torque(
    attitude_error: &Vector3<f64>,
    body_rates: &Vector3<f64>,
    sp: &Setpoint,
    gains: &GainSet,
    torque_max: &Vector3<f64>,
) -> Vector3<f64> {
    let rate_error = body_rates - sp.angular_velocity_target;
    let torque = -gains.gain_attitude * attitude_error - gains.gain_body_rate * rate_error;
    Vector3::from_fn(|i, _| torque[i].clamp(-torque_max[i], torque_max[i]))
}

/// One evaluation of the full cascade.
///
/// Degenerate geometry never fails the tick: a vanishing desired force reuses
/// the previous desired attitude (identity on the first tick) and a vertical
/// forward axis reuses the last valid heading.
pub fn control_step(
    state: &VehicleState,
    sp: &Setpoint,
    gains: &GainSet,
    params: &VehicleParams,
    memory: &ControllerMemory,
) -> (ControlOutput, ControllerMemory) {
    let mut next = *memory;

    let force = desired_force(state, sp, gains, params);
    let thrust = desired_thrust(&force, &state.attitude, params.thrust_max);

    let heading = match sp.heading_target {
        Some(h) => Some(Vector3::new(h[0], h[1], 0.0)),
        None => heading_vector(&state.attitude).ok(),
    };
    let heading = match heading {
        Some(h) => {
            next.last_heading = Some(h);
            h
        }
        None => memory.last_heading.unwrap_or_else(Vector3::x),
    };

    let desired_attitude = match desired_frame(&force, &heading) {
        Ok(s) => s,
        Err(_) => memory.last_desired_attitude.unwrap_or_else(Matrix3::identity),
    };
    next.last_desired_attitude = Some(desired_attitude);

    let e_r = attitude_error(&state.attitude, &desired_attitude);
    let torque = desired_torque(&e_r, &state.body_rates, sp, gains, &params.torque_max);

    (
        ControlOutput {
            input: ControlInput { thrust, torque },
            desired_force: force,
            desired_attitude,
            attitude_error: e_r,
        },
        next,
    )
}
