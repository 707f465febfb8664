//! Synthetic environment: axis-aligned boxes, optional triangles, and the
//! implicit ground plane `z = 0`.
//!
//! World files are line oriented:
//!
//! ```text
//! # a wall five metres ahead
//! box 4.8 -2 0 5.0 2 3
//! tri 0 0 0  1 0 0  0 1 0
//! bounds -50 -50 -1 50 50 20
//! ```

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid world: {0}")]
    Invalid(String),
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] < self.max[i] && self.min[i].is_finite() && self.max[i].is_finite())
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test. Returns the entry distance along `dir` for rays starting
    /// outside the box, the exit distance for rays starting inside.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            None
        } else if t_near >= 0.0 {
            Some(t_near)
        } else {
            Some(t_far)
        }
    }

    /// Euclidean distance from `p` to the solid box (0 inside).
    pub fn distance_to_solid(&self, p: &Vector3<f64>) -> f64 {
        let d = Vector3::from_fn(|i, _| (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]));
        d.norm()
    }

    /// Distance from `p` to the box boundary, inside or out.
    pub fn distance_to_surface(&self, p: &Vector3<f64>) -> f64 {
        if self.contains_point(p) {
            (0..3)
                .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
                .fold(f64::INFINITY, f64::min)
        } else {
            self.distance_to_solid(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub c: Vector3<f64>,
}

impl Triangle {
    /// Möller–Trumbore, two-sided.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let e1 = self.b - self.a;
        let e2 = self.c - self.a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.a;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t >= 0.0).then_some(t)
    }

    /// Closest point on the triangle to `p` (Ericson, Real-Time Collision
    /// Detection, 5.1.5).
    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (a, b, c) = (self.a, self.b, self.c);
        let ab = b - a;
        let ac = c - a;
        let ap = p - a;
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return a;
        }
        let bp = p - b;
        let d3 = ab.dot(&bp);
        let d4 = ac.dot(&bp);
        if d3 >= 0.0 && d4 <= d3 {
            return b;
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            return a + ab * (d1 / (d1 - d3));
        }
        let cp = p - c;
        let d5 = ab.dot(&cp);
        let d6 = ac.dot(&cp);
        if d6 >= 0.0 && d5 <= d6 {
            return c;
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            return a + ac * (d2 / (d2 - d6));
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
        }
        let denom = 1.0 / (va + vb + vc);
        a + ab * (vb * denom) + ac * (vc * denom)
    }
}

/// Static scene the simulated camera looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub name: String,
    pub boxes: Vec<Aabb>,
    pub triangles: Vec<Triangle>,
    pub bounds: Aabb,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self {
            name: "empty".into(),
            boxes: Vec::new(),
            triangles: Vec::new(),
            bounds: Self::default_bounds(),
        }
    }
}

impl WorldModel {
    pub fn default_bounds() -> Aabb {
        Aabb::new(
            Vector3::new(-100.0, -100.0, -1.0),
            Vector3::new(100.0, 100.0, 50.0),
        )
    }

    /// The single-wall scene used for the approach-and-land mission.
    pub fn wall() -> Self {
        Self {
            name: "wall".into(),
            boxes: vec![Aabb::new(
                Vector3::new(4.8, -2.0, 0.0),
                Vector3::new(5.0, 2.0, 3.0),
            )],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !self.bounds.is_valid() {
            return Err(WorldError::Invalid("bounds must have min < max".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.is_valid() {
                return Err(WorldError::Invalid(format!(
                    "box {i} must have min < max on every axis"
                )));
            }
            if !self.bounds.contains_box(b) {
                return Err(WorldError::Invalid(format!(
                    "box {i} lies outside the world bounds"
                )));
            }
        }
        for (i, t) in self.triangles.iter().enumerate() {
            for v in [t.a, t.b, t.c] {
                if !self.bounds.contains_point(&v) {
                    return Err(WorldError::Invalid(format!(
                        "triangle {i} lies outside the world bounds"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses world text. `name` is only used for display.
    pub fn parse(name: &str, text: &str) -> Result<Self, WorldError> {
        let mut world = WorldModel {
            name: name.to_string(),
            ..Default::default()
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap_or_default();
            let numbers: Vec<f64> = words
                .map(|w| {
                    w.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| WorldError::Parse {
                            line: line_no,
                            message: format!("`{w}` is not a finite number"),
                        })
                })
                .collect::<Result<_, _>>()?;
            let expect = |n: usize| {
                if numbers.len() == n {
                    Ok(())
                } else {
                    Err(WorldError::Parse {
                        line: line_no,
                        message: format!("`{keyword}` takes {n} numbers, got {}", numbers.len()),
                    })
                }
            };
            let v = |i: usize| Vector3::new(numbers[i], numbers[i + 1], numbers[i + 2]);
            match keyword {
                "box" => {
                    expect(6)?;
                    world.boxes.push(Aabb::new(v(0), v(3)));
                }
                "tri" => {
                    expect(9)?;
                    world.triangles.push(Triangle {
                        a: v(0),
                        b: v(3),
                        c: v(6),
                    });
                }
                "bounds" => {
                    expect(6)?;
                    world.bounds = Aabb::new(v(0), v(3));
                }
                other => {
                    return Err(WorldError::Parse {
                        line: line_no,
                        message: format!("unknown keyword `{other}`"),
                    })
                }
            }
        }
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "world".into());
        Self::parse(&name, &text)
    }

    /// Nearest intersection distance along `dir` (in units of `dir`), ground
    /// plane included.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut consider = |t: f64| {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        if origin[2] > 0.0 && dir[2] < 0.0 {
            consider(-origin[2] / dir[2]);
        }
        for b in &self.boxes {
            if let Some(t) = b.ray_hit(origin, dir) {
                consider(t);
            }
        }
        for tri in &self.triangles {
            if let Some(t) = tri.ray_hit(origin, dir) {
                consider(t);
            }
        }
        best
    }

    /// Distance from `p` to the nearest solid obstacle (ground excluded).
    pub fn obstacle_clearance(&self, p: &Vector3<f64>) -> f64 {
        let boxes = self.boxes.iter().map(|b| b.distance_to_solid(p));
        let tris = self.triangles.iter().map(|t| (t.closest_point(p) - p).norm());
        boxes.chain(tris).fold(f64::INFINITY, f64::min)
    }

    /// Distance from `p` to the nearest true surface, ground plane included.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let ground = p[2].abs();
        let boxes = self.boxes.iter().map(|b| b.distance_to_surface(p));
        let tris = self.triangles.iter().map(|t| (t.closest_point(p) - p).norm());
        boxes.chain(tris).fold(ground, f64::min)
    }
}
