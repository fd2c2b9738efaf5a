//! Sketch rasterization: loops become closed polylines (lines as segments,
//! arcs as circumcircle arcs through start/mid/end, circles as tessellated
//! rings), faces are filled by the even-odd rule, and a sketch is the union
//! of its faces.

use super::GeomError;
use crate::sem::{dequantize, Curve, CurveKind, Face, Sketch};

const CIRCLE_SEGMENTS: usize = 64;
const ARC_SEGMENTS: usize = 32;

/// Dense binary mask over [-1, 1]^2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub resolution: usize,
    pub cells: Vec<bool>,
}

impl Raster {
    fn empty(resolution: usize) -> Raster {
        Raster {
            resolution,
            cells: vec![false; resolution * resolution],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.resolution + x]
    }

    fn set(&mut self, x: usize, y: usize) {
        self.cells[y * self.resolution + x] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// True when the world point falls inside an occupied cell.
    pub fn sample(&self, x: f64, y: f64) -> bool {
        let res = self.resolution as f64;
        let cx = ((x + 1.0) / 2.0 * res).floor();
        let cy = ((y + 1.0) / 2.0 * res).floor();
        if cx < 0.0 || cy < 0.0 || cx >= res || cy >= res {
            return false;
        }
        self.get(cx as usize, cy as usize)
    }
}

fn dequant_point(p: (u8, u8)) -> (f64, f64) {
    (dequantize(p.0), dequantize(p.1))
}

/// Endpoint each curve hands to its successor.
fn curve_endpoint(curve: &Curve) -> (u8, u8) {
    *curve.points.last().expect("curves carry points")
}

/// Circumcenter of three points, `None` when collinear.
fn circumcenter(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<(f64, f64)> {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-12 {
        return None;
    }
    let a2 = a.0 * a.0 + a.1 * a.1;
    let b2 = b.0 * b.0 + b.1 * b.1;
    let c2 = c.0 * c.0 + c.1 * c.1;
    let ux = (a2 * (b.1 - c.1) + b2 * (c.1 - a.1) + c2 * (a.1 - b.1)) / d;
    let uy = (a2 * (c.0 - b.0) + b2 * (a.0 - c.0) + c2 * (b.0 - a.0)) / d;
    Some((ux, uy))
}

/// Vertices contributed by one curve, starting strictly after `pen`.
fn curve_vertices(curve: &Curve, pen: (f64, f64)) -> Vec<(f64, f64)> {
    match curve.kind {
        CurveKind::Line => vec![dequant_point(curve.points[0])],
        CurveKind::Arc => {
            let mid = dequant_point(curve.points[0]);
            let end = dequant_point(curve.points[1]);
            match circumcenter(pen, mid, end) {
                None => vec![end], // collinear triple degrades to a segment
                Some(center) => {
                    let radius = ((pen.0 - center.0).powi(2) + (pen.1 - center.1).powi(2)).sqrt();
                    let angle_of = |p: (f64, f64)| (p.1 - center.1).atan2(p.0 - center.0);
                    let a_start = angle_of(pen);
                    let a_mid = angle_of(mid);
                    let a_end = angle_of(end);
                    // Sweep counterclockwise; flip when the midpoint falls
                    // outside the start-to-end sweep.
                    let ccw = |from: f64, to: f64| {
                        let mut span = to - from;
                        while span <= 0.0 {
                            span += std::f64::consts::TAU;
                        }
                        span
                    };
                    let (sweep, sign) = if ccw(a_start, a_mid) <= ccw(a_start, a_end) {
                        (ccw(a_start, a_end), 1.0)
                    } else {
                        (ccw(a_end, a_start), -1.0)
                    };
                    (1..=ARC_SEGMENTS)
                        .map(|i| {
                            let t = i as f64 / ARC_SEGMENTS as f64;
                            let angle = a_start + sign * sweep * t;
                            (
                                center.0 + radius * angle.cos(),
                                center.1 + radius * angle.sin(),
                            )
                        })
                        .collect()
                }
            }
        }
        CurveKind::Circle => {
            let pts: Vec<(f64, f64)> = curve.points.iter().map(|&p| dequant_point(p)).collect();
            let center = circumcenter(pts[0], pts[1], pts[2])
                .or_else(|| circumcenter(pts[0], pts[1], pts[3]))
                .unwrap_or_else(|| {
                    let cx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
                    let cy = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
                    (cx, cy)
                });
            let radius = pts
                .iter()
                .map(|p| ((p.0 - center.0).powi(2) + (p.1 - center.1).powi(2)).sqrt())
                .sum::<f64>()
                / 4.0;
            (0..CIRCLE_SEGMENTS)
                .map(|i| {
                    let angle = std::f64::consts::TAU * i as f64 / CIRCLE_SEGMENTS as f64;
                    (center.0 + radius * angle.cos(), center.1 + radius * angle.sin())
                })
                .collect()
        }
    }
}

/// Closed polyline of one loop under the pen convention: each curve starts
/// at its predecessor's endpoint, the first at the last's.
pub(crate) fn loop_polyline(
    lp: &crate::sem::Loop,
    loop_index: usize,
) -> Result<Vec<(f64, f64)>, GeomError> {
    let n = lp.curves.len();
    let mut vertices: Vec<(f64, f64)> = Vec::new();
    for (i, curve) in lp.curves.iter().enumerate() {
        let pen_quant = curve_endpoint(&lp.curves[(i + n - 1) % n]);
        let pen = dequant_point(pen_quant);
        vertices.extend(curve_vertices(curve, pen));
    }
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for v in &vertices {
        if !distinct
            .iter()
            .any(|d| (d.0 - v.0).abs() < 1e-12 && (d.1 - v.1).abs() < 1e-12)
        {
            distinct.push(*v);
        }
    }
    if distinct.len() < 3 {
        return Err(GeomError::DegenerateLoop { loop_index });
    }
    Ok(vertices)
}

/// Even-odd scanline fill of one face's loops into the raster.
fn fill_face(face: &Face, base_loop_index: usize, raster: &mut Raster) -> Result<(), GeomError> {
    let res = raster.resolution;
    let mut rings = Vec::new();
    for (i, lp) in face.loops.iter().enumerate() {
        rings.push(loop_polyline(lp, base_loop_index + i)?);
    }
    for row in 0..res {
        let y = -1.0 + (row as f64 + 0.5) * 2.0 / res as f64;
        let mut crossings: Vec<f64> = Vec::new();
        for ring in &rings {
            let n = ring.len();
            for i in 0..n {
                let (x1, y1) = ring[i];
                let (x2, y2) = ring[(i + 1) % n];
                if (y1 <= y && y < y2) || (y2 <= y && y < y1) {
                    crossings.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
                }
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            let (x_enter, x_exit) = (pair[0], pair[1]);
            // Loose bounds; the center test below is exact.
            let start = ((((x_enter + 1.0) / 2.0 * res as f64) - 1.0).floor() as i64).max(0);
            let end = ((((x_exit + 1.0) / 2.0 * res as f64) + 1.0).ceil() as i64).min(res as i64);
            for col in start..end {
                let x = -1.0 + (col as f64 + 0.5) * 2.0 / res as f64;
                if x >= x_enter && x < x_exit {
                    raster.set(col as usize, row);
                }
            }
        }
    }
    Ok(())
}

/// Rasterizes a sketch: each face filled by the even-odd rule, faces
/// unioned.
pub fn rasterize_sketch(sketch: &Sketch, resolution: usize) -> Result<Raster, GeomError> {
    assert!(resolution >= 8, "resolution below the supported minimum");
    let mut raster = Raster::empty(resolution);
    let mut loop_index = 0;
    for face in &sketch.faces {
        fill_face(face, loop_index, &mut raster)?;
        loop_index += face.loops.len();
    }
    Ok(raster)
}
