//! Structured CAD model: ordered sketch-extrusion pairs over quantized
//! 6-bit parameters, with lossless serialization to token sequences.

use super::vocab::Token;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Line,
    Arc,
    Circle,
}

impl CurveKind {
    /// Number of (x, y) coordinate pairs carried by this curve kind.
    pub fn point_count(self) -> usize {
        match self {
            CurveKind::Line => 1,
            CurveKind::Arc => 2,
            CurveKind::Circle => 4,
        }
    }

    pub fn token(self) -> Token {
        match self {
            CurveKind::Line => Token::LINE,
            CurveKind::Arc => Token::ARC,
            CurveKind::Circle => Token::CIRCLE,
        }
    }

    pub fn from_token(token: Token) -> Option<CurveKind> {
        match token {
            Token::LINE => Some(CurveKind::Line),
            Token::ARC => Some(CurveKind::Arc),
            Token::CIRCLE => Some(CurveKind::Circle),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolOp {
    Add,
    Cut,
    Intersect,
}

impl BoolOp {
    pub fn token(self) -> Token {
        match self {
            BoolOp::Add => Token::ADD,
            BoolOp::Cut => Token::CUT,
            BoolOp::Intersect => Token::INTERSECT,
        }
    }

    pub fn from_token(token: Token) -> Option<BoolOp> {
        match token {
            Token::ADD => Some(BoolOp::Add),
            Token::CUT => Some(BoolOp::Cut),
            Token::INTERSECT => Some(BoolOp::Intersect),
            _ => None,
        }
    }
}

/// A single curve: line (1 point), arc (2 points) or circle (4 points),
/// coordinates quantized to 0..=63.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<(u8, u8)>,
}

impl Curve {
    pub fn new(kind: CurveKind, points: Vec<(u8, u8)>) -> Option<Curve> {
        if points.len() != kind.point_count()
            || points.iter().any(|&(x, y)| x > 63 || y > 63)
        {
            return None;
        }
        Some(Curve { kind, points })
    }

    pub fn line(p: (u8, u8)) -> Option<Curve> {
        Curve::new(CurveKind::Line, vec![p])
    }

    pub fn arc(mid: (u8, u8), end: (u8, u8)) -> Option<Curve> {
        Curve::new(CurveKind::Arc, vec![mid, end])
    }

    pub fn circle(points: [(u8, u8); 4]) -> Option<Curve> {
        Curve::new(CurveKind::Circle, points.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loop {
    pub curves: Vec<Curve>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub loops: Vec<Loop>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub faces: Vec<Face>,
}

impl Sketch {
    /// Total number of curves across all faces and loops.
    pub fn curve_count(&self) -> usize {
        self.faces
            .iter()
            .flat_map(|f| &f.loops)
            .map(|l| l.curves.len())
            .sum()
    }

    pub fn loop_count(&self) -> usize {
        self.faces.iter().map(|f| f.loops.len()).sum()
    }
}

/// Extrusion parameters in serialized payload order:
/// `B V V T T T R*9 S O O` followed by the extrusion end marker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extrusion {
    pub op: BoolOp,
    /// Displacements of the two extrusion planes from the sketch plane.
    pub v: [u8; 2],
    /// Translation vector.
    pub t: [u8; 3],
    /// Row-major 3x3 rotation entries, each in {-1, 0, 1}.
    pub r: [i8; 9],
    /// Scale factor.
    pub s: u8,
    /// Origin of scaling (x, y).
    pub o: [u8; 2],
}

impl Extrusion {
    pub fn is_valid(&self) -> bool {
        self.v.iter().all(|&x| x <= 63)
            && self.t.iter().all(|&x| x <= 63)
            && self.r.iter().all(|&x| (-1..=1).contains(&x))
            && self.s <= 63
            && self.o.iter().all(|&x| x <= 63)
    }

    /// Identity rotation entries.
    pub fn identity_r() -> [i8; 9] {
        [1, 0, 0, 0, 1, 0, 0, 0, 1]
    }
}

/// Ordered sketch-extrusion pairs making up one CAD object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CadModel {
    pub pairs: Vec<(Sketch, Extrusion)>,
}

impl CadModel {
    /// Checks all structural invariants: non-empty nesting at every level,
    /// curve arities, and parameter ranges.
    pub fn is_valid(&self) -> bool {
        !self.pairs.is_empty()
            && self.pairs.iter().all(|(sketch, extrusion)| {
                !sketch.faces.is_empty()
                    && sketch.faces.iter().all(|face| {
                        !face.loops.is_empty()
                            && face.loops.iter().all(|lp| {
                                !lp.curves.is_empty()
                                    && lp.curves.iter().all(|c| {
                                        c.points.len() == c.kind.point_count()
                                            && c.points.iter().all(|&(x, y)| x <= 63 && y <= 63)
                                    })
                            })
                    })
                    && extrusion.is_valid()
            })
    }
}

/// Maps a quantized coordinate/value in 0..=63 onto [-1, 1].
pub fn dequantize(value: u8) -> f64 {
    2.0 * value as f64 / 63.0 - 1.0
}

/// Maps a quantized scale in 0..=63 onto (0, 2].
pub fn dequantize_scale(value: u8) -> f64 {
    2.0 * (value as f64 + 1.0) / 64.0
}

/// Inverse of [`dequantize`]: floors a continuous value in [-1, 1] to the
/// nearest 6-bit cell, clamping outliers.
pub fn quantize(value: f64) -> u8 {
    let cell = ((value + 1.0) / 2.0 * 63.0).round();
    cell.clamp(0.0, 63.0) as u8
}
