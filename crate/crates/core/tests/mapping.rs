use std::collections::HashMap;

use nalgebra::Vector3;

use vrgcs_core::scan::{extract_chunk_mesh, DepthCameraSpec, Pose, VoxelMap, WorldModel};
use vrgcs_core::sim::{parse_script, SimConfig, Simulation};

const SWEEP: &str = "
0 takeoff
4 cmd_vel 0.5 0 0 0
6 cmd_vel 0 0 0 0.4
7 cmd_vel 0 0 0 -0.4
9 cmd_vel 0 0 0 0.4
10 cmd_vel 0 0 0 0
12 land
";

/// Bucketed vertex set for nearest-neighbour queries within `radius`.
struct VertexGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<Vector3<f64>>>,
}

impl VertexGrid {
    fn new(cell: f64, vertices: &[Vector3<f64>]) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<Vector3<f64>>> = HashMap::new();
        for v in vertices {
            buckets.entry(Self::key(cell, v)).or_default().push(*v);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|i| (p[i] / cell).floor() as i64)
    }

    fn any_within(&self, p: &Vector3<f64>, radius: f64) -> bool {
        let k = Self::key(self.cell, p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if b.iter().any(|v| (v - p).norm() <= radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn vertices(map: &VoxelMap) -> Vec<Vector3<f64>> {
    map.chunk_revisions()
        .into_iter()
        .flat_map(|(c, _)| extract_chunk_mesh(map, c).unwrap().positions)
        .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
        .collect()
}

/// Front face of the wall box, sampled every 5 cm.
fn wall_face_samples(world: &WorldModel) -> Vec<Vector3<f64>> {
    let b = &world.boxes[0];
    let mut out = Vec::new();
    let step = 0.05;
    let ny = ((b.max[1] - b.min[1]) / step).round() as usize;
    let nz = ((b.max[2] - b.min[2]) / step).round() as usize;
    for iy in 0..=ny {
        for iz in 0..=nz {
            out.push(Vector3::new(
                b.min[0],
                b.min[1] + iy as f64 * step,
                b.min[2] + iz as f64 * step,
            ));
        }
    }
    out
}

#[test]
fn wall_sweep_reconstruction_fidelity() {
    let world = WorldModel::wall();
    let config = SimConfig::default();
    let spec: DepthCameraSpec = config.camera.clone();
    let mut sim = Simulation::new(config, world.clone());
    let script = parse_script(SWEEP).unwrap();

    let mut poses = Vec::new();
    let mut next = 0;
    while sim.tick_count() < 20 * 500 {
        let now = sim.tick_count() as f64 / 500.0;
        while next < script.len() && script[next].time <= now + 1e-9 {
            sim.apply(script[next].command).unwrap();
            next += 1;
        }
        if sim.step().unwrap().scanned {
            poses.push(Pose::of_vehicle(sim.state()));
        }
    }
    assert!(poses.len() > 50);

    let verts = vertices(sim.map());
    assert!(!verts.is_empty());
    let voxel = sim.map().voxel_size();

    // Every vertex sits near something real.
    let limit = voxel * 3f64.sqrt();
    let worst = verts
        .iter()
        .map(|v| world.surface_distance(v))
        .fold(0.0, f64::max);
    assert!(worst <= limit, "vertex {worst} m from the nearest surface");

    // The wall face the camera saw is reconstructed.
    let grid = VertexGrid::new(0.25, &verts);
    let covered: Vec<_> = wall_face_samples(&world)
        .into_iter()
        .filter(|p| poses.iter().any(|pose| spec.sees(pose, p)))
        .collect();
    assert!(covered.len() > 1000, "only {} covered samples", covered.len());
    let hit = covered.iter().filter(|p| grid.any_within(p, 2.0 * voxel)).count();
    let fraction = hit as f64 / covered.len() as f64;
    assert!(fraction >= 0.95, "fraction {fraction}");
}

#[test]
fn unseen_world_leaves_map_empty() {
    let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
    for _ in 0..1000 {
        sim.step().unwrap();
    }
    assert_eq!(sim.map().chunk_count(), 0);
}
