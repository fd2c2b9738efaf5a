//! Surface point clouds sampled from voxel boundaries, and Chamfer distance
//! between clouds with a kd-tree accelerated nearest-neighbor search.

use super::voxel::VoxelGrid;
use super::GeomError;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// XYZ text: one `x y z` line per point.
    pub fn to_xyz(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        out
    }

    pub fn from_xyz(text: &str) -> Option<PointCloud> {
        let mut points = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(|c| c.parse().ok())
                .collect::<Option<Vec<f64>>>()?;
            if coords.len() != 3 {
                return None;
            }
            points.push([coords[0], coords[1], coords[2]]);
        }
        Some(PointCloud { points })
    }

    /// ASCII PLY with vertex positions only.
    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        out.push_str(&format!("element vertex {}\n", self.points.len()));
        out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        out
    }
}

/// Occupied voxels with at least one empty 6-neighbor; cells on the grid
/// border count their outside as empty.
fn boundary_voxels(grid: &VoxelGrid) -> Vec<(usize, usize, usize)> {
    let res = grid.resolution;
    let mut cells = Vec::new();
    for z in 0..res {
        for y in 0..res {
            for x in 0..res {
                if !grid.get(x, y, z) {
                    continue;
                }
                let mut exposed = x == 0 || y == 0 || z == 0
                    || x == res - 1
                    || y == res - 1
                    || z == res - 1;
                if !exposed {
                    exposed = !grid.get(x - 1, y, z)
                        || !grid.get(x + 1, y, z)
                        || !grid.get(x, y - 1, z)
                        || !grid.get(x, y + 1, z)
                        || !grid.get(x, y, z - 1)
                        || !grid.get(x, y, z + 1);
                }
                if exposed {
                    cells.push((x, y, z));
                }
            }
        }
    }
    cells
}

/// Samples `n` points uniformly (seeded, with replacement) from centers of
/// boundary voxels, normalized so the boundary's bounding box is centered
/// at the origin with its longest side scaled to 1.
pub fn surface_pointcloud(grid: &VoxelGrid, n: usize, seed: u64) -> Result<PointCloud, GeomError> {
    assert!(n >= 1, "sample count must be positive");
    let cells = boundary_voxels(grid);
    if cells.is_empty() {
        return Err(GeomError::EmptySolid);
    }
    let centers: Vec<[f64; 3]> = cells
        .iter()
        .map(|&(x, y, z)| grid.center(x, y, z))
        .collect();

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &centers {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let mid = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let c = centers[rng.random_range(0..centers.len())];
            [
                (c[0] - mid[0]) * scale,
                (c[1] - mid[1]) * scale,
                (c[2] - mid[2]) * scale,
            ]
        })
        .collect();
    Ok(PointCloud { points })
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// kd-tree over points, built by median split, queried for exact nearest
/// squared distances.
struct KdTree {
    points: Vec<[f64; 3]>,
    // node layout: index into `order` plus left/right children
    order: Vec<usize>,
}

impl KdTree {
    fn build(points: &[[f64; 3]]) -> KdTree {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            order: Vec::with_capacity(points.len()),
        };
        tree.split(&mut order, 0);
        tree
    }

    /// Recursively arranges `order` so pre-order traversal visits median
    /// nodes first; the arrangement is stored flat in `self.order` with
    /// implicit subtree extents reconstructed during query.
    fn split(&mut self, indices: &mut [usize], axis: usize) {
        if indices.is_empty() {
            return;
        }
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a][axis]
                .partial_cmp(&self.points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        self.order.push(indices[mid]);
        let (left, rest) = indices.split_at_mut(mid);
        let (_, right) = rest.split_at_mut(1);
        self.split(left, (axis + 1) % 3);
        self.split(right, (axis + 1) % 3);
    }

    fn nearest(&self, query: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(query, 0, self.points.len(), 0, &mut best);
        best
    }

    /// `lo..hi` addresses the pre-order slice for one subtree whose left
    /// half has `mid` nodes.
    fn search(&self, query: &[f64; 3], lo: usize, count: usize, axis: usize, best: &mut f64) {
        if count == 0 {
            return;
        }
        let node = self.points[self.order[lo]];
        let d = sq_dist(query, &node);
        if d < *best {
            *best = d;
        }
        // Mirrors the median split: the left part holds count / 2 nodes.
        let left_count = count / 2;
        let right_count = count - 1 - left_count;
        let left_lo = lo + 1;
        let right_lo = lo + 1 + left_count;
        let delta = query[axis] - node[axis];
        let (near, far) = if delta < 0.0 {
            ((left_lo, left_count), (right_lo, right_count))
        } else {
            ((right_lo, right_count), (left_lo, left_count))
        };
        self.search(query, near.0, near.1, (axis + 1) % 3, best);
        if delta * delta < *best {
            self.search(query, far.0, far.1, (axis + 1) % 3, best);
        }
    }
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// `a` into `b` plus the reverse term.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let tree_b = KdTree::build(&b.points);
    let mut forward = 0.0;
    for p in &a.points {
        forward += tree_b.nearest(p);
    }
    forward /= a.points.len() as f64;

    let tree_a = KdTree::build(&a.points);
    let mut backward = 0.0;
    for p in &b.points {
        backward += tree_a.nearest(p);
    }
    backward /= b.points.len() as f64;
    Ok(forward + backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::voxel::pair_voxels;
    use crate::sem::{BoolOp, Curve, Extrusion, Face, Loop, Sketch};

    fn full_grid(res: usize) -> VoxelGrid {
        let mut grid = VoxelGrid::empty(res);
        grid.occupancy.iter_mut().for_each(|c| *c = true);
        grid
    }

    /// Brute-force oracle: O(|a||b|) double loop.
    fn chamfer_brute(a: &PointCloud, b: &PointCloud) -> f64 {
        let min_to = |from: &PointCloud, to: &PointCloud| {
            let mut sum = 0.0;
            for p in &from.points {
                let mut best = f64::INFINITY;
                for q in &to.points {
                    let d = sq_dist(p, q);
                    if d < best {
                        best = d;
                    }
                }
                sum += best;
            }
            sum / from.points.len() as f64
        };
        min_to(a, b) + min_to(b, a)
    }

    #[test]
    fn full_box_samples_lie_on_faces() {
        let grid = full_grid(16);
        let cloud = surface_pointcloud(&grid, 500, 7).unwrap();
        assert_eq!(cloud.len(), 500);
        // Normalized box has extent 1 per side; every boundary sample must
        // push at least one coordinate to the extremes within a voxel pitch.
        let pitch = 1.0 / 15.0; // 16 cells, extent measured center-to-center
        for p in &cloud.points {
            let at_face = p
                .iter()
                .any(|&c| (c.abs() - 0.5).abs() < pitch);
            assert!(at_face, "sample {p:?} not on a face");
        }
    }

    #[test]
    fn single_sample_is_a_boundary_center() {
        let mut grid = VoxelGrid::empty(8);
        let idx = grid.index(3, 4, 5);
        grid.occupancy[idx] = true;
        let cloud = surface_pointcloud(&grid, 1, 0).unwrap();
        assert_eq!(cloud.len(), 1);
        // A single voxel normalizes to the origin.
        assert_eq!(cloud.points[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_seed_reproduces_cloud() {
        let grid = full_grid(12);
        let a = surface_pointcloud(&grid, 200, 9).unwrap();
        let b = surface_pointcloud(&grid, 200, 9).unwrap();
        assert_eq!(a, b);
        let c = surface_pointcloud(&grid, 200, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_solid_rejected() {
        let grid = VoxelGrid::empty(8);
        assert_eq!(
            surface_pointcloud(&grid, 10, 0),
            Err(GeomError::EmptySolid)
        );
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let grid = full_grid(10);
        let cloud = surface_pointcloud(&grid, 300, 3).unwrap();
        assert_eq!(chamfer_distance(&cloud, &cloud).unwrap(), 0.0);
    }

    #[test]
    fn two_single_points_give_twice_squared_distance() {
        let a = PointCloud {
            points: vec![[0.0, 0.0, 0.0]],
        };
        let b = PointCloud {
            points: vec![[0.3, 0.4, 0.0]],
        };
        let d = chamfer_distance(&a, &b).unwrap();
        assert!((d - 2.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn chamfer_matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let random_cloud = |rng: &mut ChaCha8Rng, n: usize| PointCloud {
            points: (0..n)
                .map(|_| {
                    [
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    ]
                })
                .collect(),
        };
        for _ in 0..5 {
            let a = random_cloud(&mut rng, 100);
            let b = random_cloud(&mut rng, 100);
            let fast = chamfer_distance(&a, &b).unwrap();
            let brute = chamfer_brute(&a, &b);
            assert_eq!(fast, brute, "kd-tree must agree with the double loop");
            let sym = chamfer_distance(&b, &a).unwrap();
            assert_eq!(fast, sym, "chamfer distance is symmetric");
            assert!(fast >= 0.0);
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        let empty = PointCloud { points: vec![] };
        let one = PointCloud {
            points: vec![[0.0; 3]],
        };
        assert_eq!(chamfer_distance(&empty, &one), Err(GeomError::EmptyCloud));
    }

    #[test]
    fn xyz_and_ply_exports() {
        let pair = (
            Sketch {
                faces: vec![Face {
                    loops: vec![Loop {
                        curves: vec![
                            Curve::line((50, 12)).unwrap(),
                            Curve::line((50, 50)).unwrap(),
                            Curve::line((12, 50)).unwrap(),
                            Curve::line((12, 12)).unwrap(),
                        ],
                    }],
                }],
            },
            Extrusion {
                op: BoolOp::Add,
                v: [16, 48],
                t: [31, 31, 31],
                r: Extrusion::identity_r(),
                s: 31,
                o: [31, 31],
            },
        );
        let grid = pair_voxels(&pair, 24).unwrap();
        let cloud = surface_pointcloud(&grid, 64, 1).unwrap();
        let xyz = cloud.to_xyz();
        assert_eq!(PointCloud::from_xyz(&xyz).unwrap(), cloud);
        let ply = cloud.to_ply();
        assert!(ply.starts_with("ply\nformat ascii 1.0\nelement vertex 64\n"));
        assert_eq!(ply.lines().count(), 7 + 64);
    }
}
