//! Simulated forward-looking depth camera.
//!
//! Rays are laid out on a pinhole grid spanning the field of view. Depth is
//! reported along the optical axis, as stereo depth cameras do, and samples
//! outside the working range are dropped.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::world::WorldModel;
use crate::dynamics::VehicleState;

/// Rigid transform; `rotation` maps camera axes into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn compose(&self, child: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation * child.position,
            rotation: self.rotation * child.rotation,
        }
    }

    pub fn of_vehicle(state: &VehicleState) -> Pose {
        Pose {
            position: state.position,
            rotation: state.attitude,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.rotation.iter())
            .all(|v| v.is_finite())
    }
}

/// Camera intrinsics and mounting. Camera axes follow the body convention:
/// x along the optical axis, y to the left, z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthCameraSpec {
    /// degrees
    pub horizontal_fov: f64,
    /// degrees
    pub vertical_fov: f64,
    /// m
    pub min_range: f64,
    /// m
    pub max_range: f64,
    pub width: usize,
    pub height: usize,
    #[serde(skip, default = "Pose::identity")]
    pub mount: Pose,
}

impl Default for DepthCameraSpec {
    fn default() -> Self {
        Self {
            horizontal_fov: 110.0,
            vertical_fov: 80.0,
            min_range: 0.1,
            max_range: 8.0,
            width: 96,
            height: 54,
            mount: Pose::identity(),
        }
    }
}

impl DepthCameraSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range && self.max_range.is_finite()) {
            return Err("camera range must satisfy 0 < min_range < max_range".into());
        }
        for (name, fov) in [
            ("horizontal_fov", self.horizontal_fov),
            ("vertical_fov", self.vertical_fov),
        ] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(format!("{name} must be in (0, 180) degrees"));
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err("ray grid must be non-empty".into());
        }
        Ok(())
    }

    /// Ray for pixel (`row`, `col`) in camera axes, scaled so its optical-axis
    /// component is 1. Row 0 is the top of the image, column 0 the left edge.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let tan_h = (self.horizontal_fov.to_radians() / 2.0).tan();
        let tan_v = (self.vertical_fov.to_radians() / 2.0).tan();
        let right = (2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0) * tan_h;
        let up = (1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64) * tan_v;
        Vector3::new(1.0, -right, up)
    }

    /// True if world point `p` projects inside the image and its depth is in
    /// range. Occlusion is not considered.
    pub fn sees(&self, pose: &Pose, p: &Vector3<f64>) -> bool {
        let local = pose.rotation.transpose() * (p - pose.position);
        let depth = local[0];
        if depth < self.min_range || depth > self.max_range {
            return false;
        }
        let tan_h = (self.horizontal_fov.to_radians() / 2.0).tan();
        let tan_v = (self.vertical_fov.to_radians() / 2.0).tan();
        (local[1] / depth).abs() <= tan_h && (local[2] / depth).abs() <= tan_v
    }
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Row-major; `None` marks a ray with no return in range.
    pub depths: Vec<Option<f64>>,
    /// Camera rays in camera axes, parallel to `depths`.
    pub rays: Vec<Vector3<f64>>,
    pub camera_pose: Pose,
    pub timestamp: f64,
}

impl DepthImage {
    pub fn depth(&self, row: usize, col: usize) -> Option<f64> {
        self.depths[row * self.width + col]
    }

    /// Sample nearest the optical axis.
    pub fn center(&self) -> Option<f64> {
        self.depth(self.height / 2, self.width / 2)
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| d.is_some()).count()
    }

    /// World-frame points of every valid sample.
    pub fn points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.depths.iter().zip(&self.rays).filter_map(move |(d, ray)| {
            d.map(|depth| self.camera_pose.position + self.camera_pose.rotation * (ray * depth))
        })
    }
}

/// Casts every ray of the grid into `world` from `camera_pose` (the camera's
/// own pose, mount already applied).
pub fn render_depth(
    world: &WorldModel,
    camera_pose: &Pose,
    spec: &DepthCameraSpec,
    timestamp: f64,
) -> DepthImage {
    let mut depths = Vec::with_capacity(spec.width * spec.height);
    let mut rays = Vec::with_capacity(spec.width * spec.height);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let ray = spec.ray(row, col);
            let dir = camera_pose.rotation * ray;
            // The ray's optical component is 1, so the hit parameter is the depth.
            let depth = world
                .raycast(&camera_pose.position, &dir)
                .filter(|&t| t >= spec.min_range && t <= spec.max_range);
            depths.push(depth);
            rays.push(ray);
        }
    }
    DepthImage {
        width: spec.width,
        height: spec.height,
        min_range: spec.min_range,
        max_range: spec.max_range,
        depths,
        rays,
        camera_pose: *camera_pose,
        timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rotation_from_euler;
    use crate::scan::world::Aabb;

    fn wall_at(x: f64) -> WorldModel {
        WorldModel {
            boxes: vec![Aabb::new(
                Vector3::new(x, -50.0, 0.0),
                Vector3::new(x + 0.2, 50.0, 40.0),
            )],
            ..Default::default()
        }
    }

    fn pose_at(z: f64) -> Pose {
        Pose {
            position: Vector3::new(0.0, 0.0, z),
            rotation: Matrix3::identity(),
        }
    }

    #[test]
    fn center_depth_to_wall() {
        let img = render_depth(&wall_at(5.0), &pose_at(1.0), &DepthCameraSpec::default(), 0.0);
        let d = img.center().unwrap();
        assert!((d - 5.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn wall_beyond_range_is_no_return() {
        let img = render_depth(&wall_at(10.0), &pose_at(1.0), &DepthCameraSpec::default(), 0.0);
        assert_eq!(img.center(), None);
    }

    #[test]
    fn looking_up_sees_nothing() {
        let pose = Pose {
            position: Vector3::new(0.0, 0.0, 30.0),
            rotation: rotation_from_euler(0.0, -std::f64::consts::FRAC_PI_2, 0.0),
        };
        let img = render_depth(&WorldModel::default(), &pose, &DepthCameraSpec::default(), 0.0);
        assert_eq!(img.valid_count(), 0);
    }

    #[test]
    fn samples_respect_range() {
        let img = render_depth(
            &WorldModel::wall(),
            &pose_at(1.0),
            &DepthCameraSpec::default(),
            0.0,
        );
        assert!(img.valid_count() > 0);
        for d in img.depths.iter().flatten() {
            assert!(*d >= 0.1 && *d <= 8.0);
        }
    }

    #[test]
    fn grid_spans_fov() {
        let spec = DepthCameraSpec::default();
        let corner = spec.ray(0, 0);
        let tan_h = (55f64).to_radians().tan();
        assert!(corner[1] > 0.0 && corner[1] < tan_h);
        assert!(corner[2] > 0.0);
        let pose = pose_at(1.0);
        assert!(spec.sees(&pose, &Vector3::new(3.0, 0.0, 1.0)));
        assert!(!spec.sees(&pose, &Vector3::new(-3.0, 0.0, 1.0)));
        assert!(!spec.sees(&pose, &Vector3::new(9.0, 0.0, 1.0)));
    }
}
