//! Sequence validation: syntactic parse plus basic geometric sanity checks.
//!
//! Validation never fails with an error; all findings are reported in the
//! returned [`ValidationReport`]. A sequence is valid when it parses and
//! carries no geometric flags. The fraction of invalid sequences over a
//! generated set is the invalidity ratio used throughout evaluation.

use super::model::{dequantize, CadModel, CurveKind};
use super::parse::{parse_model, ParseError};
use super::vocab::Token;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Geometric sanity findings in an otherwise parseable sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum GeometricFlag {
    /// The two extrusion planes coincide after dequantization.
    ZeroThicknessExtrusion { pair: usize },
    /// All four circle points are identical.
    DegenerateCircle { pair: usize },
    /// The arc's two points coincide.
    DegenerateArc { pair: usize },
}

impl fmt::Display for GeometricFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometricFlag::ZeroThicknessExtrusion { pair } => {
                write!(f, "ZeroThicknessExtrusion(pair {pair})")
            }
            GeometricFlag::DegenerateCircle { pair } => write!(f, "DegenerateCircle(pair {pair})"),
            GeometricFlag::DegenerateArc { pair } => write!(f, "DegenerateArc(pair {pair})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub valid: bool,
    pub error: Option<ParseError>,
    pub geometric_flags: Vec<GeometricFlag>,
}

impl ValidationReport {
    /// True when the sequence parses, regardless of geometric flags.
    pub fn syntactically_valid(&self) -> bool {
        self.error.is_none()
    }
}

/// Collects geometric sanity flags for a parsed model.
pub fn geometric_flags(model: &CadModel) -> Vec<GeometricFlag> {
    let mut flags = Vec::new();
    for (pair, (sketch, extrusion)) in model.pairs.iter().enumerate() {
        for curve in sketch.faces.iter().flat_map(|f| &f.loops).flat_map(|l| &l.curves) {
            match curve.kind {
                CurveKind::Circle => {
                    let first = curve.points[0];
                    if curve.points.iter().all(|&p| p == first) {
                        flags.push(GeometricFlag::DegenerateCircle { pair });
                    }
                }
                CurveKind::Arc => {
                    if curve.points[0] == curve.points[1] {
                        flags.push(GeometricFlag::DegenerateArc { pair });
                    }
                }
                CurveKind::Line => {}
            }
        }
        if dequantize(extrusion.v[0]) == dequantize(extrusion.v[1]) {
            flags.push(GeometricFlag::ZeroThicknessExtrusion { pair });
        }
    }
    flags
}

/// Validates a token sequence syntactically and geometrically.
pub fn validate_sequence(tokens: &[Token]) -> ValidationReport {
    match parse_model(tokens) {
        Ok(model) => {
            let flags = geometric_flags(&model);
            ValidationReport {
                valid: flags.is_empty(),
                error: None,
                geometric_flags: flags,
            }
        }
        Err(error) => ValidationReport {
            valid: false,
            error: Some(error),
            geometric_flags: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::model::{BoolOp, Curve, Extrusion, Face, Loop, Sketch};
    use crate::sem::parse::serialize_model;

    fn pair_model(v: [u8; 2]) -> CadModel {
        CadModel {
            pairs: vec![(
                Sketch {
                    faces: vec![Face {
                        loops: vec![Loop {
                            curves: vec![Curve::line((5, 5)).unwrap(), Curve::line((20, 5)).unwrap()],
                        }],
                    }],
                },
                Extrusion {
                    op: BoolOp::Add,
                    v,
                    t: [31, 31, 31],
                    r: Extrusion::identity_r(),
                    s: 31,
                    o: [31, 31],
                },
            )],
        }
    }

    #[test]
    fn zero_thickness_extrusion_flagged() {
        let report = validate_sequence(&serialize_model(&pair_model([7, 7])));
        assert!(!report.valid);
        assert!(report.syntactically_valid());
        assert_eq!(
            report.geometric_flags,
            vec![GeometricFlag::ZeroThicknessExtrusion { pair: 0 }]
        );
    }

    #[test]
    fn distinct_planes_pass() {
        let report = validate_sequence(&serialize_model(&pair_model([7, 8])));
        assert!(report.valid);
        assert!(report.error.is_none());
        assert!(report.geometric_flags.is_empty());
    }

    #[test]
    fn degenerate_circle_and_arc_flagged() {
        let mut model = pair_model([1, 2]);
        model.pairs[0].0.faces[0].loops[0].curves =
            vec![Curve::circle([(9, 9); 4]).unwrap(), Curve::arc((4, 4), (4, 4)).unwrap()];
        let report = validate_sequence(&serialize_model(&model));
        assert!(!report.valid);
        assert_eq!(report.geometric_flags.len(), 2);
        assert!(matches!(
            report.geometric_flags[0],
            GeometricFlag::DegenerateCircle { pair: 0 }
        ));
        assert!(matches!(
            report.geometric_flags[1],
            GeometricFlag::DegenerateArc { pair: 0 }
        ));
    }

    #[test]
    fn parse_failure_reported_not_thrown() {
        let report = validate_sequence(&[Token::LINE, Token::PAD]);
        assert!(!report.valid);
        assert!(report.error.is_some());
        assert!(!report.syntactically_valid());
    }
}
