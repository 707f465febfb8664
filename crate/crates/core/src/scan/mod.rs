//! Synthetic world, simulated depth camera and incremental voxel mapping.

pub mod camera;
pub mod mesh;
pub mod voxel;
pub mod world;

pub use camera::{render_depth, DepthCameraSpec, DepthImage, Pose};
pub use mesh::{extract_chunk_mesh, MeshChunk, MeshError};
pub use voxel::{ChunkCoord, VoxelIndex, VoxelMap, CHUNK_SIZE};
pub use world::{Aabb, Triangle, WorldError, WorldModel};
