//! Blocky surface extraction: one quad per occupied-voxel face that borders
//! free space.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::voxel::{ChunkCoord, VoxelIndex, VoxelMap, CHUNK_SIZE, FACE_DIRECTIONS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("no chunk at {0:?}")]
    UnknownChunk([i32; 3]),
}

/// Triangle mesh of one chunk at one revision; the unit of network transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshChunk {
    pub coords: [i32; 3],
    pub revision: u32,
    /// World-frame positions, m.
    pub positions: Vec<[f32; 3]>,
    /// Unit normals, one per vertex.
    pub normals: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl MeshChunk {
    pub fn empty(coords: [i32; 3], revision: u32) -> Self {
        Self {
            coords,
            revision,
            positions: Vec::new(),
            normals: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Checks the structural invariants: matching normal count, indices in
    /// range, unit normals, and vertices inside the chunk's bounds padded by
    /// one voxel.
    pub fn check(&self, voxel_size: f64) -> Result<(), String> {
        if self.normals.len() != self.positions.len() {
            return Err("normal count differs from vertex count".into());
        }
        let v = self.positions.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= v)) {
            return Err(format!("triangle {t:?} indexes past {v} vertices"));
        }
        for n in &self.normals {
            let len = n.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
            if (len - 1.0).abs() > 1e-3 {
                return Err(format!("normal {n:?} is not unit length"));
            }
        }
        let extent = voxel_size * CHUNK_SIZE as f64;
        for p in &self.positions {
            for i in 0..3 {
                let lo = self.coords[i] as f64 * extent - voxel_size;
                let hi = (self.coords[i] as f64 + 1.0) * extent + voxel_size;
                let c = p[i] as f64;
                if c < lo || c > hi {
                    return Err(format!("vertex {p:?} outside chunk {:?}", self.coords));
                }
            }
        }
        Ok(())
    }
}

/// Corners of the face of the unit voxel with outward normal `dir`, counter
/// clockwise seen from outside.
fn face_corners(dir: [i64; 3]) -> [[i64; 3]; 4] {
    let axis = dir.iter().position(|&d| d != 0).expect("axis direction");
    let positive = dir[axis] > 0;
    let u = (axis + 1) % 3;
    let w = (axis + 2) % 3;
    let mut quad = [[0i64; 3]; 4];
    let uv = [(0, 0), (1, 0), (1, 1), (0, 1)];
    for (k, (a, b)) in uv.into_iter().enumerate() {
        quad[k][axis] = if positive { 1 } else { 0 };
        quad[k][u] = a;
        quad[k][w] = b;
    }
    if !positive {
        quad.reverse();
    }
    quad
}

/// Extracts the chunk's surface mesh. Deterministic: identical map state
/// gives a bit-identical chunk.
pub fn extract_chunk_mesh(map: &VoxelMap, coords: ChunkCoord) -> Result<MeshChunk, MeshError> {
    let revision = map.revision(coords).ok_or(MeshError::UnknownChunk(coords.0))?;
    let size = map.voxel_size();

    let mut index_of: HashMap<[i64; 3], u32> = HashMap::new();
    let mut corners: Vec<[i64; 3]> = Vec::new();
    let mut normal_sums: Vec<Vector3<f64>> = Vec::new();
    let mut first_normal: Vec<Vector3<f64>> = Vec::new();
    let mut triangles = Vec::new();

    for voxel in coords.voxels() {
        if !map.is_occupied(voxel) {
            continue;
        }
        for dir in FACE_DIRECTIONS {
            if map.is_occupied(voxel.offset(dir)) {
                continue;
            }
            let normal = Vector3::new(dir[0] as f64, dir[1] as f64, dir[2] as f64);
            let quad = face_corners(dir).map(|c| {
                let corner = corner_of(voxel, c);
                let next = corners.len() as u32;
                let idx = *index_of.entry(corner).or_insert_with(|| {
                    corners.push(corner);
                    normal_sums.push(Vector3::zeros());
                    first_normal.push(normal);
                    next
                });
                normal_sums[idx as usize] += normal;
                idx
            });
            triangles.push([quad[0], quad[1], quad[2]]);
            triangles.push([quad[0], quad[2], quad[3]]);
        }
    }

    let positions = corners
        .iter()
        .map(|c| c.map(|v| (v as f64 * size) as f32))
        .collect();
    let normals = normal_sums
        .iter()
        .zip(&first_normal)
        .map(|(sum, first)| {
            // Opposing faces meeting at a vertex can cancel out.
            let n = if sum.norm() > 1e-9 {
                sum.normalize()
            } else {
                *first
            };
            [n[0] as f32, n[1] as f32, n[2] as f32]
        })
        .collect();

    Ok(MeshChunk {
        coords: coords.0,
        revision,
        positions,
        normals,
        triangles,
    })
}

fn corner_of(voxel: VoxelIndex, offset: [i64; 3]) -> [i64; 3] {
    [
        voxel.0[0] + offset[0],
        voxel.0[1] + offset[1],
        voxel.0[2] + offset[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_with(points: &[[f64; 3]]) -> VoxelMap {
        let mut map = VoxelMap::new(0.1);
        let pts: Vec<_> = points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        map.integrate_points(&pts);
        map
    }

    /// Counts exposed faces by brute force over every occupied voxel.
    fn brute_force_faces(map: &VoxelMap) -> usize {
        map.occupied_voxels()
            .map(|v| {
                FACE_DIRECTIONS
                    .iter()
                    .filter(|d| !map.is_occupied(v.offset(**d)))
                    .count()
            })
            .sum()
    }

    #[test]
    fn single_voxel_cube() {
        let map = map_with(&[[0.05, 0.05, 0.05]]);
        let mesh = extract_chunk_mesh(&map, ChunkCoord([0, 0, 0])).unwrap();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.triangle_count(), 12);
        assert_eq!(mesh.revision, 1);
        mesh.check(0.1).unwrap();
    }

    #[test]
    fn adjacent_voxels_cull_shared_face() {
        let map = map_with(&[[0.05, 0.05, 0.05], [0.15, 0.05, 0.05]]);
        assert_eq!(brute_force_faces(&map), 10);
        let mesh = extract_chunk_mesh(&map, ChunkCoord([0, 0, 0])).unwrap();
        assert_eq!(mesh.triangle_count(), 2 * brute_force_faces(&map));
        assert_eq!(mesh.triangle_count(), 20);
        assert_eq!(mesh.vertex_count(), 12);
    }

    #[test]
    fn empty_and_unknown_chunks() {
        let mut map = map_with(&[[0.05, 0.05, 0.05]]);
        assert_eq!(
            extract_chunk_mesh(&map, ChunkCoord([9, 9, 9])),
            Err(MeshError::UnknownChunk([9, 9, 9]))
        );
        // A chunk whose counters are all below threshold has no surface.
        let mut sparse = VoxelMap::with_threshold(0.1, 2);
        sparse.integrate_points([&Vector3::new(0.05, 0.05, 0.05)]);
        let mesh = extract_chunk_mesh(&sparse, ChunkCoord([0, 0, 0])).unwrap();
        assert_eq!((mesh.vertex_count(), mesh.triangle_count()), (0, 0));
        map.integrate_points([&Vector3::new(0.05, 0.05, 0.05)]);
        let blank = MeshChunk::empty([0, 0, 0], 1);
        assert_eq!(blank.vertex_count(), 0);
    }

    #[test]
    fn winding_faces_outward() {
        let map = map_with(&[[0.05, 0.05, 0.05]]);
        let mesh = extract_chunk_mesh(&map, ChunkCoord([0, 0, 0])).unwrap();
        let centre = Vector3::new(0.05, 0.05, 0.05);
        let p = |i: u32| {
            let v = mesh.positions[i as usize];
            Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
        };
        for t in &mesh.triangles {
            let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
            let n = (b - a).cross(&(c - a));
            let mid = (a + b + c) / 3.0;
            assert!(n.dot(&(mid - centre)) > 0.0, "inward triangle {t:?}");
        }
        for (pos, n) in mesh.positions.iter().zip(&mesh.normals) {
            let out = Vector3::new(pos[0] as f64, pos[1] as f64, pos[2] as f64) - centre;
            let n = Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
            assert!(n.dot(&out) > 0.0);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|i| {
                let f = i as f64;
                [
                    (f * 0.37).sin() * 0.7 + 0.8,
                    (f * 0.11).cos() * 0.7 + 0.8,
                    (f * 0.05) % 1.5,
                ]
            })
            .collect();
        let a = map_with(&pts);
        let b = map_with(&pts);
        for (coords, _) in a.chunk_revisions() {
            assert_eq!(extract_chunk_mesh(&a, coords), extract_chunk_mesh(&b, coords));
            extract_chunk_mesh(&a, coords).unwrap().check(0.1).unwrap();
        }
    }
}
