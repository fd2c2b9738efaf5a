//! Voxelization of sketch-extrusion pairs and boolean combination of pairs
//! into a solid, all over the clipped world box [-1, 1]^3.

use super::raster::rasterize_sketch;
use super::GeomError;
use crate::sem::{dequantize, dequantize_scale, BoolOp, CadModel, Extrusion, Sketch};
use serde::{Deserialize, Serialize};

/// Dense binary occupancy over [-1, 1]^3, indexed x-fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(resolution: usize) -> VoxelGrid {
        assert!(resolution >= 8, "resolution below the supported minimum");
        VoxelGrid {
            resolution,
            occupancy: vec![false; resolution * resolution * resolution],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution + y) * self.resolution + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|&c| c)
    }

    /// Center of a voxel in world coordinates.
    pub fn center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let res = self.resolution as f64;
        [
            -1.0 + (x as f64 + 0.5) * 2.0 / res,
            -1.0 + (y as f64 + 0.5) * 2.0 / res,
            -1.0 + (z as f64 + 0.5) * 2.0 / res,
        ]
    }

    /// Fraction of the world box occupied.
    pub fn volume_fraction(&self) -> f64 {
        self.count() as f64 / self.occupancy.len() as f64
    }

    /// Run-length form: `{resolution, runs: [[start, len], ...]}` over the
    /// x-fastest flattened order.
    pub fn to_runs_json(&self) -> serde_json::Value {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < self.occupancy.len() {
            if self.occupancy[i] {
                let start = i;
                while i < self.occupancy.len() && self.occupancy[i] {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        serde_json::json!({
            "schema_version": 1,
            "resolution": self.resolution,
            "runs": runs,
        })
    }

    pub fn from_runs_json(value: &serde_json::Value) -> Option<VoxelGrid> {
        #[derive(Deserialize, Serialize)]
        struct Runs {
            resolution: usize,
            runs: Vec<(usize, usize)>,
        }
        let parsed: Runs = serde_json::from_value(value.clone()).ok()?;
        let mut grid = VoxelGrid::empty(parsed.resolution);
        for (start, len) in parsed.runs {
            if start + len > grid.occupancy.len() {
                return None;
            }
            for i in start..start + len {
                grid.occupancy[i] = true;
            }
        }
        Some(grid)
    }
}

fn invert_3x3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det.abs() < 1e-9 {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

/// Voxelizes one pair: the sketch raster extruded between the dequantized
/// v planes, rotated by R, translated by T, then scaled by S about O.
/// A singular R collapses the solid to measure zero and yields an empty
/// grid.
pub fn pair_voxels(
    pair: &(Sketch, Extrusion),
    resolution: usize,
) -> Result<VoxelGrid, GeomError> {
    let (sketch, extrusion) = pair;
    let z0 = dequantize(extrusion.v[0]);
    let z1 = dequantize(extrusion.v[1]);
    if z0 == z1 {
        return Err(GeomError::ZeroThicknessExtrusion);
    }
    let (z_min, z_max) = if z0 < z1 { (z0, z1) } else { (z1, z0) };
    let raster = rasterize_sketch(sketch, resolution)?;

    let rot: [f64; 9] = std::array::from_fn(|i| extrusion.r[i] as f64);
    let mut grid = VoxelGrid::empty(resolution);
    let Some(rot_inv) = invert_3x3(&rot) else {
        return Ok(grid);
    };
    let t = [
        dequantize(extrusion.t[0]),
        dequantize(extrusion.t[1]),
        dequantize(extrusion.t[2]),
    ];
    let s = dequantize_scale(extrusion.s);
    let o = [dequantize(extrusion.o[0]), dequantize(extrusion.o[1]), 0.0];

    for z in 0..resolution {
        for y in 0..resolution {
            for x in 0..resolution {
                let q = grid.center(x, y, z);
                // Invert scale about O, then translation, then rotation.
                let p2 = [
                    o[0] + (q[0] - o[0]) / s,
                    o[1] + (q[1] - o[1]) / s,
                    o[2] + (q[2] - o[2]) / s,
                ];
                let p1 = [p2[0] - t[0], p2[1] - t[1], p2[2] - t[2]];
                let p0 = [
                    rot_inv[0] * p1[0] + rot_inv[1] * p1[1] + rot_inv[2] * p1[2],
                    rot_inv[3] * p1[0] + rot_inv[4] * p1[1] + rot_inv[5] * p1[2],
                    rot_inv[6] * p1[0] + rot_inv[7] * p1[1] + rot_inv[8] * p1[2],
                ];
                if p0[2] >= z_min && p0[2] <= z_max && raster.sample(p0[0], p0[1]) {
                    let idx = grid.index(x, y, z);
                    grid.occupancy[idx] = true;
                }
            }
        }
    }
    Ok(grid)
}

/// Left-fold of the pairs' voxel grids under their boolean ops; the first
/// pair always contributes as an addition.
pub fn model_voxels(model: &CadModel, resolution: usize) -> Result<VoxelGrid, GeomError> {
    let mut acc = VoxelGrid::empty(resolution);
    for (i, pair) in model.pairs.iter().enumerate() {
        let grid = pair_voxels(pair, resolution)?;
        let op = if i == 0 { BoolOp::Add } else { pair.1.op };
        for (a, &b) in acc.occupancy.iter_mut().zip(&grid.occupancy) {
            *a = match op {
                BoolOp::Add => *a || b,
                BoolOp::Cut => *a && !b,
                BoolOp::Intersect => *a && b,
            };
        }
    }
    Ok(acc)
}
