//! Server configuration, read from a TOML file. Every key is optional and
//! falls back to the defaults below.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::GainSet;
use crate::dynamics::VehicleParams;
use crate::pilot::PilotLimits;
use crate::scan::DepthCameraSpec;
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    /// kg
    pub mass: f64,
    /// Principal moments of inertia, kg·m².
    pub inertia_diag: [f64; 3],
    /// m/s²
    pub gravity: f64,
    /// N
    pub thrust_max: f64,
    /// N·m
    pub torque_max: [f64; 3],
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            mass: p.mass,
            inertia_diag: [p.inertia[(0, 0)], p.inertia[(1, 1)], p.inertia[(2, 2)]],
            gravity: p.gravity,
            thrust_max: p.thrust_max,
            torque_max: p.torque_max.into(),
        }
    }
}

impl VehicleConfig {
    pub fn params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.mass,
            inertia: Matrix3::from_diagonal(&Vector3::from(self.inertia_diag)),
            gravity: self.gravity,
            thrust_max: self.thrust_max,
            torque_max: Vector3::from(self.torque_max),
        }
    }
}

/// Controller gains as diagonals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude: [f64; 3],
    pub body_rate: [f64; 3],
}

impl Default for GainConfig {
    fn default() -> Self {
        let g = GainSet::default();
        let diag = |m: &Matrix3<f64>| [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        Self {
            position: diag(&g.gain_position_error),
            velocity: diag(&g.gain_velocity_error),
            attitude: diag(&g.gain_attitude),
            body_rate: diag(&g.gain_body_rate),
        }
    }
}

impl GainConfig {
    pub fn gains(&self) -> GainSet {
        let m = |d: [f64; 3]| Matrix3::from_diagonal(&Vector3::from(d));
        GainSet {
            gain_velocity_error: m(self.velocity),
            gain_position_error: m(self.position),
            gain_attitude: m(self.attitude),
            gain_body_rate: m(self.body_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen_addr: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Hz
    pub physics_rate: f64,
    /// Hz
    pub scan_rate: f64,
    /// Hz
    pub pose_rate: f64,
    /// Latency probes per session, Hz.
    pub probe_rate: f64,
    /// Relative to the config file when not absolute. `None` uses the
    /// built-in wall world.
    pub world: Option<PathBuf>,
    /// Client-side translation of the rendered scene, m.
    pub viewer_offset_m: [f64; 3],
    /// m
    pub voxel_size: f64,
    pub start_position: [f64; 3],
    pub vehicle: VehicleConfig,
    pub gains: GainConfig,
    pub limits: PilotLimits,
    pub camera: DepthCameraSpec,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1".into(),
            port: 8765,
            physics_rate: 500.0,
            scan_rate: 10.0,
            pose_rate: 30.0,
            probe_rate: 10.0,
            world: None,
            viewer_offset_m: [5.0, 0.0, 0.0],
            voxel_size: 0.1,
            start_position: [0.0; 3],
            vehicle: VehicleConfig::default(),
            gains: GainConfig::default(),
            limits: PilotLimits::default(),
            camera: DepthCameraSpec::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config file; a relative world path is resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(world), Some(dir)) = (&cfg.world, path.parent()) {
            if world.is_relative() {
                cfg.world = Some(dir.join(world));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, rate) in [
            ("physics_rate", self.physics_rate),
            ("scan_rate", self.scan_rate),
            ("pose_rate", self.pose_rate),
            ("probe_rate", self.probe_rate),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if self.physics_rate < 100.0 {
            return invalid("physics_rate must be at least 100 Hz".into());
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return invalid("voxel_size must be positive".into());
        }
        if self
            .viewer_offset_m
            .iter()
            .chain(&self.start_position)
            .any(|v| !v.is_finite())
        {
            return invalid("offsets and positions must be finite".into());
        }
        self.vehicle
            .params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gains
            .gains()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.limits.validate().map_err(ConfigError::Invalid)?;
        self.camera.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            params: self.vehicle.params(),
            gains: self.gains.gains(),
            limits: self.limits.clone(),
            camera: self.camera.clone(),
            voxel_size: self.voxel_size,
            physics_rate: self.physics_rate,
            scan_rate: self.scan_rate,
            start_position: Vector3::from(self.start_position),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_sim() {
        let cfg = ServerConfig::from_toml("").unwrap();
        assert_eq!(cfg, ServerConfig::default());
        assert_eq!(cfg.sim_config(), SimConfig::default());
        assert_eq!(cfg.viewer_offset_m, [5.0, 0.0, 0.0]);
    }

    #[test]
    fn partial_tables() {
        let cfg = ServerConfig::from_toml(
            "port = 9000\n[limits]\nv_max = 0.5\n[gains]\nposition = [1.0, 2.0, 3.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.limits.v_max, 0.5);
        assert_eq!(cfg.limits.yaw_rate_max, 1.0);
        assert_eq!(cfg.gains.gains().gain_position_error[(2, 2)], 3.0);
        assert_eq!(cfg.gains.velocity, [5.0, 5.0, 6.0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServerConfig::from_toml("pose_rate = 0.0").is_err());
        assert!(ServerConfig::from_toml("[limits]\nv_max = -1.0").is_err());
        assert!(ServerConfig::from_toml("bogus = 1").is_err());
        assert!(ServerConfig::from_toml("port = \"x\"").is_err());
    }
}
