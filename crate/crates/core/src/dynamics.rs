//! Rigid-body model of the hexacopter.
//!
//! The vehicle is a single rigid body driven by a collective thrust along the
//! body z axis and a body-frame torque. Translational motion is integrated in
//! the world frame, rotational motion in the body frame. Attitude is kept as a
//! rotation matrix (body to world) whose columns are the body axes; Euler
//! angles only appear at the I/O boundary.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{hat, orthonormalize};

/// Tolerance used when checking that the attitude stays in SO(3).
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Distance from gimbal lock below which the Euler-rate mapping is refused.
pub const GIMBAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("pitch {pitch} rad is too close to gimbal lock")]
    SingularAttitude { pitch: f64 },
    #[error("non-finite vehicle state")]
    NonFiniteState,
    #[error("timestep {0} s outside (0, 0.01]")]
    InvalidTimestep(f64),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Full rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// World-frame position, m.
    pub position: Vector3<f64>,
    /// World-frame velocity, m/s.
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation; columns are the body axes c1, c2, c3.
    pub attitude: Matrix3<f64>,
    /// Body-frame angular velocity (p, q, r), rad/s.
    pub body_rates: Vector3<f64>,
    /// Seconds since simulation start.
    pub time: f64,
}

impl VehicleState {
    /// Level, motionless vehicle at `position`.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Matrix3::identity(),
            body_rates: Vector3::zeros(),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.body_rates.iter().all(|v| v.is_finite())
            && self.time.is_finite()
    }

    /// Body forward axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.attitude.column(0).into_owned()
    }

    /// Thrust axis in world coordinates.
    pub fn thrust_axis(&self) -> Vector3<f64> {
        self.attitude.column(2).into_owned()
    }

    /// Largest absolute entry of `SᵀS − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.attitude.transpose() * self.attitude - Matrix3::identity()).amax()
    }
}

/// Mass properties and actuator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Body-frame inertia tensor, kg·m².
    pub inertia: Matrix3<f64>,
    /// m/s²
    pub gravity: f64,
    /// N
    pub thrust_max: f64,
    /// Per-axis torque limit, N·m.
    pub torque_max: Vector3<f64>,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 2.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.02, 0.02, 0.04)),
            gravity: 9.81,
            thrust_max: 60.0,
            torque_max: Vector3::new(2.0, 2.0, 1.0),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return bad("gravity must be positive");
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-12 {
            return bad("inertia must be symmetric");
        }
        if self.inertia.symmetric_eigenvalues().iter().any(|&e| e <= 0.0) {
            return bad("inertia must be positive definite");
        }
        if !(self.thrust_max > self.mass * self.gravity) {
            return bad("thrust_max must exceed vehicle weight");
        }
        if self.torque_max.iter().any(|&t| !(t > 0.0)) {
            return bad("torque_max must be positive");
        }
        Ok(())
    }

    /// Weight of the vehicle, i.e. the hover thrust, N.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Collective thrust and body torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// N, along the body z axis.
    pub thrust: f64,
    /// N·m, body frame.
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn zero() -> Self {
        Self {
            thrust: 0.0,
            torque: Vector3::zeros(),
        }
    }

    /// Clamp into the actuator envelope of `params`.
    pub fn saturate(self, params: &VehicleParams) -> Self {
        let torque =
            Vector3::from_fn(|i, _| self.torque[i].clamp(-params.torque_max[i], params.torque_max[i]));
        Self {
            thrust: self.thrust.clamp(0.0, params.thrust_max),
            torque,
        }
    }
}

/// Maps 3-2-1 Euler angle rates to body angular velocity.
///
/// `euler` and `euler_rates` are (roll, pitch, yaw) and their derivatives.
pub fn euler_rates_to_body_rates(
    euler: Vector3<f64>,
    euler_rates: Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    let (phi, theta) = (euler[0], euler[1]);
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(DynamicsError::SingularAttitude { pitch: theta });
    }
    let (s_phi, c_phi) = phi.sin_cos();
    let (s_theta, c_theta) = theta.sin_cos();
    let (dphi, dtheta, dpsi) = (euler_rates[0], euler_rates[1], euler_rates[2]);
    Ok(Vector3::new(
        dphi - dpsi * s_theta,
        dtheta * c_phi + dpsi * s_phi * c_theta,
        -dtheta * s_phi + dpsi * c_phi * c_theta,
    ))
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`, body to world.
pub fn rotation_from_euler(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Inverse of [`rotation_from_euler`]; returns (roll, pitch, yaw).
pub fn euler_from_rotation(attitude: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-attitude[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = attitude[(2, 1)].atan2(attitude[(2, 2)]);
    let yaw = attitude[(1, 0)].atan2(attitude[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

/// World-frame acceleration from gravity and thrust.
pub fn translational_accel(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Vector3<f64> {
    accel_for_attitude(&state.attitude, input, params)
}

fn accel_for_attitude(attitude: &Matrix3<f64>, input: &ControlInput, params: &VehicleParams) -> Vector3<f64> {
    let c3 = attitude.column(2).into_owned();
    (c3 * input.thrust - Vector3::z() * (params.mass * params.gravity)) / params.mass
}

/// Body-frame angular acceleration `J⁻¹(T − Ω × JΩ)`.
pub fn angular_accel(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Vector3<f64> {
    rates_derivative(&state.body_rates, input, params)
}

fn rates_derivative(rates: &Vector3<f64>, input: &ControlInput, params: &VehicleParams) -> Vector3<f64> {
    let momentum = params.inertia * rates;
    let rhs = input.torque - rates.cross(&momentum);
    // Inertia is validated SPD, so Cholesky always succeeds.
    params
        .inertia
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| Vector3::repeat(f64::NAN))
}

#[derive(Clone, Copy)]
struct Derivative {
    velocity: Vector3<f64>,
    accel: Vector3<f64>,
    attitude_rate: Matrix3<f64>,
    rates_rate: Vector3<f64>,
}

fn derivative(
    attitude: &Matrix3<f64>,
    velocity: &Vector3<f64>,
    rates: &Vector3<f64>,
    input: &ControlInput,
    params: &VehicleParams,
) -> Derivative {
    Derivative {
        velocity: *velocity,
        accel: accel_for_attitude(attitude, input, params),
        attitude_rate: attitude * hat(rates),
        rates_rate: rates_derivative(rates, input, params),
    }
}

/// Advances the state by `dt` with classical RK4, input held constant.
///
/// The attitude is projected back onto SO(3) after the step.
pub fn step(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    if !state.is_finite() || !input.thrust.is_finite() || !input.torque.iter().all(|t| t.is_finite()) {
        return Err(DynamicsError::NonFiniteState);
    }

    let (r0, v0, s0, w0) = (state.position, state.velocity, state.attitude, state.body_rates);
    let k1 = derivative(&s0, &v0, &w0, input, params);
    let h = dt / 2.0;
    let k2 = derivative(
        &(s0 + k1.attitude_rate * h),
        &(v0 + k1.accel * h),
        &(w0 + k1.rates_rate * h),
        input,
        params,
    );
    let k3 = derivative(
        &(s0 + k2.attitude_rate * h),
        &(v0 + k2.accel * h),
        &(w0 + k2.rates_rate * h),
        input,
        params,
    );
    let k4 = derivative(
        &(s0 + k3.attitude_rate * dt),
        &(v0 + k3.accel * dt),
        &(w0 + k3.rates_rate * dt),
        input,
        params,
    );

    let sixth = dt / 6.0;
    let next = VehicleState {
        position: r0 + (k1.velocity + k2.velocity * 2.0 + k3.velocity * 2.0 + k4.velocity) * sixth,
        velocity: v0 + (k1.accel + k2.accel * 2.0 + k3.accel * 2.0 + k4.accel) * sixth,
        attitude: orthonormalize(
            &(s0 + (k1.attitude_rate + k2.attitude_rate * 2.0 + k3.attitude_rate * 2.0 + k4.attitude_rate)
                * sixth),
        ),
        body_rates: w0 + (k1.rates_rate + k2.rates_rate * 2.0 + k3.rates_rate * 2.0 + k4.rates_rate) * sixth,
        time: state.time + dt,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    #[test]
    fn euler_rates_identity_at_level() {
        let rates = Vector3::new(0.1, 0.2, 0.3);
        let body = euler_rates_to_body_rates(Vector3::zeros(), rates).unwrap();
        assert_eq!(body, rates);
        let zero = euler_rates_to_body_rates(Vector3::new(0.3, -0.2, 1.0), Vector3::zeros()).unwrap();
        assert_eq!(zero, Vector3::zeros());
    }

    #[test]
    fn euler_rates_pitched_yaw_rate() {
        let body =
            euler_rates_to_body_rates(Vector3::new(0.0, 0.5, 0.0), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(body[0], -(0.5f64).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(body[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(body[2], (0.5f64).cos(), epsilon = 1e-15);
    }

    #[test]
    fn euler_rates_reject_gimbal_lock() {
        let err = euler_rates_to_body_rates(Vector3::new(0.0, FRAC_PI_2, 0.0), Vector3::zeros());
        assert!(matches!(err, Err(DynamicsError::SingularAttitude { .. })));
    }

    #[test]
    fn rotation_yaw_quarter_turn() {
        assert_eq!(rotation_from_euler(0.0, 0.0, 0.0), Matrix3::identity());
        let s = rotation_from_euler(0.0, 0.0, FRAC_PI_2);
        assert_abs_diff_eq!(s[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(2, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn free_fall_and_hover_accel() {
        let params = VehicleParams {
            mass: 1.0,
            ..Default::default()
        };
        let state = VehicleState::at_rest(Vector3::zeros());
        let a = translational_accel(&state, &ControlInput::zero(), &params);
        assert_eq!(a, Vector3::new(0.0, 0.0, -9.81));
        let hover = ControlInput {
            thrust: 9.81,
            torque: Vector3::zeros(),
        };
        assert_eq!(translational_accel(&state, &hover, &params), Vector3::zeros());
    }

    #[test]
    fn rolled_hover_thrust_accel() {
        let params = VehicleParams {
            mass: 1.0,
            ..Default::default()
        };
        let mut state = VehicleState::at_rest(Vector3::zeros());
        state.attitude = rotation_from_euler(FRAC_PI_6, 0.0, 0.0);
        let f = 9.81;
        let a = translational_accel(
            &state,
            &ControlInput {
                thrust: f,
                torque: Vector3::zeros(),
            },
            &params,
        );
        // c3 of Rx(φ) is (0, −sin φ, cos φ).
        assert_abs_diff_eq!(a[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], -f * FRAC_PI_6.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(a[2], f * FRAC_PI_6.cos() - 9.81, epsilon = 1e-12);
    }

    #[test]
    fn angular_accel_cases() {
        let params = VehicleParams::default();
        let mut state = VehicleState::at_rest(Vector3::zeros());
        assert_eq!(
            angular_accel(&state, &ControlInput::zero(), &params),
            Vector3::zeros()
        );
        state.body_rates = Vector3::new(0.0, 0.0, 3.0);
        assert_eq!(
            angular_accel(&state, &ControlInput::zero(), &params),
            Vector3::zeros()
        );

        // J = diag(1,2,3), Ω = (1,1,0): JΩ = (1,2,0), Ω×JΩ = (0,0,1), so
        // J⁻¹(−Ω×JΩ) = (0,0,−1/3).
        let params = VehicleParams {
            inertia: Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)),
            ..Default::default()
        };
        state.body_rates = Vector3::new(1.0, 1.0, 0.0);
        let w = state.body_rates;
        let jw = params.inertia * w;
        let cross = Vector3::new(
            w[1] * jw[2] - w[2] * jw[1],
            w[2] * jw[0] - w[0] * jw[2],
            w[0] * jw[1] - w[1] * jw[0],
        );
        let expected = Vector3::new(-cross[0] / 1.0, -cross[1] / 2.0, -cross[2] / 3.0);
        assert_eq!(expected, Vector3::new(0.0, 0.0, -1.0 / 3.0));
        let got = angular_accel(&state, &ControlInput::zero(), &params);
        assert!((got - expected).amax() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_timestep_and_nan() {
        let params = VehicleParams::default();
        let state = VehicleState::at_rest(Vector3::zeros());
        let u = ControlInput::zero();
        assert!(matches!(
            step(&state, &u, &params, 0.0),
            Err(DynamicsError::InvalidTimestep(_))
        ));
        assert!(matches!(
            step(&state, &u, &params, 0.02),
            Err(DynamicsError::InvalidTimestep(_))
        ));
        let mut bad = state;
        bad.velocity[1] = f64::NAN;
        assert_eq!(step(&bad, &u, &params, 1e-3), Err(DynamicsError::NonFiniteState));
    }

    #[test]
    fn params_validation() {
        assert!(VehicleParams::default().validate().is_ok());
        let weak = VehicleParams {
            thrust_max: 10.0,
            ..Default::default()
        };
        assert!(weak.validate().is_err());
        let skew = VehicleParams {
            inertia: Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
            ..Default::default()
        };
        assert!(skew.validate().is_err());
    }

    #[test]
    fn saturate_clamps_envelope() {
        let params = VehicleParams::default();
        let u = ControlInput {
            thrust: 100.0,
            torque: Vector3::new(-5.0, 0.5, 3.0),
        }
        .saturate(&params);
        assert_eq!(u.thrust, 60.0);
        assert_eq!(u.torque, Vector3::new(-2.0, 0.5, 1.0));
        assert_eq!(
            ControlInput {
                thrust: -1.0,
                torque: Vector3::zeros()
            }
            .saturate(&params)
            .thrust,
            0.0
        );
    }
}
