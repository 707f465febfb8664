//! Sparse occupancy map organised in fixed-size chunks.
//!
//! Each chunk holds 16³ hit counters. A voxel is occupied once its counter
//! reaches the surface threshold; a chunk's revision is bumped whenever the
//! occupancy of any voxel that shapes its surface changes.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::DepthImage;

pub const CHUNK_SIZE: i64 = 16;
const CHUNK_VOLUME: usize = (CHUNK_SIZE * CHUNK_SIZE * CHUNK_SIZE) as usize;

/// Integer coordinates of a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkCoord(pub [i32; 3]);

/// Global integer voxel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex(pub [i64; 3]);

impl VoxelIndex {
    pub fn chunk(&self) -> ChunkCoord {
        ChunkCoord(self.0.map(|v| v.div_euclid(CHUNK_SIZE) as i32))
    }

    fn local_offset(&self) -> usize {
        let [x, y, z] = self.0.map(|v| v.rem_euclid(CHUNK_SIZE) as usize);
        (z * CHUNK_SIZE as usize + y) * CHUNK_SIZE as usize + x
    }

    pub fn offset(&self, d: [i64; 3]) -> VoxelIndex {
        VoxelIndex([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }
}

impl ChunkCoord {
    /// Smallest voxel index contained in the chunk.
    pub fn origin_voxel(&self) -> VoxelIndex {
        VoxelIndex(self.0.map(|c| c as i64 * CHUNK_SIZE))
    }

    pub fn voxels(&self) -> impl Iterator<Item = VoxelIndex> {
        let o = self.origin_voxel().0;
        (0..CHUNK_SIZE).flat_map(move |z| {
            (0..CHUNK_SIZE)
                .flat_map(move |y| (0..CHUNK_SIZE).map(move |x| VoxelIndex([o[0] + x, o[1] + y, o[2] + z])))
        })
    }
}

#[derive(Debug, Clone)]
struct Chunk {
    counters: Box<[u32]>,
    revision: u32,
}

impl Chunk {
    fn new() -> Self {
        Self {
            counters: vec![0; CHUNK_VOLUME].into_boxed_slice(),
            revision: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    voxel_size: f64,
    threshold: u32,
    chunks: BTreeMap<ChunkCoord, Chunk>,
}

impl Default for VoxelMap {
    fn default() -> Self {
        Self::new(0.10)
    }
}

impl VoxelMap {
    pub fn new(voxel_size: f64) -> Self {
        Self::with_threshold(voxel_size, 1)
    }

    /// Map whose voxels become occupied after `threshold` hits.
    pub fn with_threshold(voxel_size: f64, threshold: u32) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        assert!(threshold > 0, "threshold must be positive");
        Self {
            voxel_size,
            threshold,
            chunks: BTreeMap::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Edge length of a chunk, m.
    pub fn chunk_extent(&self) -> f64 {
        self.voxel_size * CHUNK_SIZE as f64
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> VoxelIndex {
        VoxelIndex([0, 1, 2].map(|i| (p[i] / self.voxel_size).floor() as i64))
    }

    pub fn counter(&self, v: VoxelIndex) -> u32 {
        self.chunks
            .get(&v.chunk())
            .map_or(0, |c| c.counters[v.local_offset()])
    }

    pub fn is_occupied(&self, v: VoxelIndex) -> bool {
        self.counter(v) >= self.threshold
    }

    pub fn contains_chunk(&self, coords: ChunkCoord) -> bool {
        self.chunks.contains_key(&coords)
    }

    pub fn revision(&self, coords: ChunkCoord) -> Option<u32> {
        self.chunks.get(&coords).map(|c| c.revision)
    }

    /// All chunks with their current revisions, in coordinate order.
    pub fn chunk_revisions(&self) -> Vec<(ChunkCoord, u32)> {
        self.chunks.iter().map(|(k, c)| (*k, c.revision)).collect()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn occupied_voxels(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.chunks.iter().flat_map(move |(coord, chunk)| {
            coord
                .voxels()
                .filter(move |v| chunk.counters[v.local_offset()] >= self.threshold)
        })
    }

    /// Registers one hit at world point `p`. Returns the chunks whose surface
    /// changed, without bumping revisions.
    fn add_hit(&mut self, p: &Vector3<f64>, dirty: &mut BTreeSet<ChunkCoord>) {
        let v = self.voxel_of(p);
        let coords = v.chunk();
        let threshold = self.threshold;
        let chunk = self.chunks.entry(coords).or_insert_with(Chunk::new);
        let counter = &mut chunk.counters[v.local_offset()];
        let before = *counter;
        *counter = counter.saturating_add(1);
        if before < threshold && *counter >= threshold {
            dirty.insert(coords);
            // Faces shared with neighbouring chunks change their surfaces too.
            for d in FACE_DIRECTIONS {
                let n = v.offset(d).chunk();
                if n != coords && self.chunks.contains_key(&n) {
                    dirty.insert(n);
                }
            }
        }
    }

    /// Marks the voxel of every valid sample as hit. Returns the chunks whose
    /// revision was bumped.
    pub fn integrate_scan(&mut self, image: &DepthImage) -> BTreeSet<ChunkCoord> {
        if !image.camera_pose.is_finite() {
            return BTreeSet::new();
        }
        let points: Vec<_> = image.points().collect();
        self.integrate_points(&points)
    }

    /// Integrates raw world-frame hit points, same semantics as
    /// [`integrate_scan`](Self::integrate_scan).
    pub fn integrate_points<'a>(
        &mut self,
        points: impl IntoIterator<Item = &'a Vector3<f64>>,
    ) -> BTreeSet<ChunkCoord> {
        let mut dirty = BTreeSet::new();
        for p in points {
            if p.iter().all(|v| v.is_finite()) {
                self.add_hit(p, &mut dirty);
            }
        }
        for coords in &dirty {
            if let Some(chunk) = self.chunks.get_mut(coords) {
                chunk.revision = chunk.revision.saturating_add(1);
            }
        }
        dirty
    }
}

pub(crate) const FACE_DIRECTIONS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::camera::{render_depth, DepthCameraSpec, Pose};
    use crate::scan::world::WorldModel;

    #[test]
    fn chunk_index_arithmetic() {
        let map = VoxelMap::new(0.1);
        let p = Vector3::new(5.0, 0.0, 1.0);
        let v = map.voxel_of(&p);
        // floor(5.0 / 1.6) = 3, floor(0 / 1.6) = 0, floor(1.0 / 1.6) = 0
        assert_eq!(v.chunk(), ChunkCoord([3, 0, 0]));
        let neg = map.voxel_of(&Vector3::new(-0.05, -1.7, 0.0));
        assert_eq!(neg.0, [-1, -17, 0]);
        assert_eq!(neg.chunk(), ChunkCoord([-1, -2, 0]));
    }

    #[test]
    fn single_hit_marks_chunk() {
        let mut map = VoxelMap::new(0.1);
        let dirty = map.integrate_points([&Vector3::new(5.0, 0.0, 1.0)]);
        assert_eq!(dirty.into_iter().collect::<Vec<_>>(), vec![ChunkCoord([3, 0, 0])]);
        assert_eq!(map.revision(ChunkCoord([3, 0, 0])), Some(1));
    }

    #[test]
    fn reintegration_is_idempotent_on_surface() {
        let world = WorldModel::wall();
        let pose = Pose {
            position: Vector3::new(1.0, 0.0, 1.0),
            ..Pose::identity()
        };
        let img = render_depth(&world, &pose, &DepthCameraSpec::default(), 0.0);
        let mut map = VoxelMap::new(0.1);
        let first = map.integrate_scan(&img);
        assert!(!first.is_empty());
        let revisions = map.chunk_revisions();
        let second = map.integrate_scan(&img);
        assert!(second.is_empty());
        assert_eq!(map.chunk_revisions(), revisions);
    }

    #[test]
    fn no_return_image_changes_nothing() {
        let pose = Pose {
            position: Vector3::new(0.0, 0.0, 30.0),
            rotation: crate::dynamics::rotation_from_euler(0.0, -1.5, 0.0),
        };
        let img = render_depth(&WorldModel::default(), &pose, &DepthCameraSpec::default(), 0.0);
        let mut map = VoxelMap::new(0.1);
        assert!(map.integrate_scan(&img).is_empty());
        assert_eq!(map.chunk_count(), 0);
    }

    #[test]
    fn boundary_voxel_dirties_neighbour() {
        let mut map = VoxelMap::new(0.1);
        // Voxel 15 is the last of chunk 0 along x; voxel 16 is the first of chunk 1.
        map.integrate_points([&Vector3::new(1.65, 0.05, 0.05)]);
        assert_eq!(map.revision(ChunkCoord([1, 0, 0])), Some(1));
        let dirty = map.integrate_points([&Vector3::new(1.55, 0.05, 0.05)]);
        assert!(dirty.contains(&ChunkCoord([0, 0, 0])));
        assert!(dirty.contains(&ChunkCoord([1, 0, 0])));
        assert_eq!(map.revision(ChunkCoord([1, 0, 0])), Some(2));
    }
}
