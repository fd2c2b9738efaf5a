//! Geometric realization of models: 2D rasters, voxel solids with boolean
//! combination, surface point clouds, and Chamfer distance. Everything works
//! in the dequantized world box [-1, 1].

mod cloud;
mod raster;
mod voxel;

pub use cloud::{chamfer_distance, surface_pointcloud, PointCloud};
pub use raster::{rasterize_sketch, Raster};
pub use voxel::{model_voxels, pair_voxels, VoxelGrid};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("loop {loop_index} has fewer than 3 distinct polyline vertices")]
    DegenerateLoop { loop_index: usize },
    #[error("extrusion planes coincide")]
    ZeroThicknessExtrusion,
    #[error("solid has no occupied voxels")]
    EmptySolid,
    #[error("point cloud is empty")]
    EmptyCloud,
}
