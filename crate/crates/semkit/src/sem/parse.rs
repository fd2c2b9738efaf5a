//! Token-sequence parser and serializer for the sketch-and-extrude language.
//!
//! The serializer and parser are exact inverses: `parse(serialize(m)) == m`
//! for every structurally valid model, and `serialize(parse(s)) == s` for
//! every accepted sequence (ignoring a trailing pad run, which the parser
//! records separately).

use super::model::{BoolOp, CadModel, Curve, CurveKind, Extrusion, Face, Loop, Sketch};
use super::vocab::{Token, TokenSet};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected token {found} at position {position}, expected one of {expected:?}")]
    UnexpectedToken {
        position: usize,
        found: Token,
        expected: TokenSet,
    },
    #[error("sequence ended mid-structure")]
    TruncatedSequence,
    #[error("wrong point count for {kind:?} at position {position}")]
    BadArity { kind: CurveKind, position: usize },
    #[error("numeric value out of domain at position {position}")]
    BadRange { position: usize },
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        let t = self.peek().ok_or(ParseError::TruncatedSequence)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, expected: TokenSet) -> Result<Token, ParseError> {
        let position = self.pos;
        let found = self.next()?;
        if expected.contains(found) {
            Ok(found)
        } else {
            Err(ParseError::UnexpectedToken {
                position,
                found,
                expected,
            })
        }
    }

    /// Reads one numeric payload slot. Number tokens outside the slot's
    /// domain are a range error; non-numeric tokens are unexpected.
    fn numeric_slot(&mut self, allowed: TokenSet) -> Result<i16, ParseError> {
        let position = self.pos;
        let found = self.next()?;
        if allowed.contains(found) {
            Ok(found.number_value().expect("numeric slot"))
        } else if found.is_number() {
            Err(ParseError::BadRange { position })
        } else {
            Err(ParseError::UnexpectedToken {
                position,
                found,
                expected: allowed,
            })
        }
    }

    fn coord_slot(&mut self) -> Result<u8, ParseError> {
        self.numeric_slot(TokenSet::numbers()).map(|v| v as u8)
    }
}

/// Parses a token sequence into a structured model. Trailing pad tokens are
/// accepted and ignored; pads anywhere else are an error.
pub fn parse_model(tokens: &[Token]) -> Result<CadModel, ParseError> {
    let mut cursor = Cursor { tokens, pos: 0 };
    let mut pairs = Vec::new();

    loop {
        let sketch = parse_sketch(&mut cursor)?;
        let extrusion = parse_extrusion(&mut cursor)?;
        pairs.push((sketch, extrusion));

        match cursor.peek() {
            None => break,
            Some(Token::PAD) => {
                // Only a trailing pad run may follow.
                while let Some(t) = cursor.peek() {
                    if t != Token::PAD {
                        return Err(ParseError::UnexpectedToken {
                            position: cursor.pos,
                            found: t,
                            expected: TokenSet::from_tokens(&[Token::PAD]),
                        });
                    }
                    cursor.pos += 1;
                }
                break;
            }
            Some(t) if t.is_curve_kind() => continue,
            Some(t) => {
                return Err(ParseError::UnexpectedToken {
                    position: cursor.pos,
                    found: t,
                    expected: TokenSet::from_tokens(&[
                        Token::LINE,
                        Token::ARC,
                        Token::CIRCLE,
                        Token::PAD,
                    ]),
                })
            }
        }
    }

    Ok(CadModel { pairs })
}

fn curve_start_set(closer: Token) -> TokenSet {
    TokenSet::from_tokens(&[Token::LINE, Token::ARC, Token::CIRCLE, closer])
}

fn parse_sketch(cursor: &mut Cursor) -> Result<Sketch, ParseError> {
    let mut faces = Vec::new();
    loop {
        let face = parse_face(cursor)?;
        faces.push(face);
        // After <face_end>: another face (starting at a curve) or <sketch_end>.
        let t = cursor.expect(curve_start_set(Token::SKETCH_END))?;
        if t == Token::SKETCH_END {
            return Ok(Sketch { faces });
        }
        cursor.pos -= 1;
    }
}

fn parse_face(cursor: &mut Cursor) -> Result<Face, ParseError> {
    let mut loops = Vec::new();
    loop {
        let lp = parse_loop(cursor)?;
        loops.push(lp);
        let t = cursor.expect(curve_start_set(Token::FACE_END))?;
        if t == Token::FACE_END {
            return Ok(Face { loops });
        }
        cursor.pos -= 1;
    }
}

fn parse_loop(cursor: &mut Cursor) -> Result<Loop, ParseError> {
    let mut curves = Vec::new();
    loop {
        let curve = parse_curve(cursor)?;
        curves.push(curve);
        let t = cursor.expect(curve_start_set(Token::LOOP_END))?;
        if t == Token::LOOP_END {
            return Ok(Loop { curves });
        }
        cursor.pos -= 1;
    }
}

fn parse_curve(cursor: &mut Cursor) -> Result<Curve, ParseError> {
    let kind_token = cursor.expect(TokenSet::from_tokens(&[
        Token::LINE,
        Token::ARC,
        Token::CIRCLE,
    ]))?;
    let kind = CurveKind::from_token(kind_token).expect("curve kind");

    // Read the contiguous run of number tokens, then check arity.
    let run_start = cursor.pos;
    let mut values = Vec::new();
    while let Some(t) = cursor.peek() {
        if t.is_number() {
            values.push((cursor.pos, t));
            cursor.pos += 1;
        } else {
            break;
        }
    }
    if cursor.peek().is_none() && values.len() < 2 * kind.point_count() {
        return Err(ParseError::TruncatedSequence);
    }
    if values.len() != 2 * kind.point_count() {
        return Err(ParseError::BadArity {
            kind,
            position: run_start,
        });
    }
    let mut coords = Vec::with_capacity(values.len());
    for (position, t) in values {
        match t.coord_value() {
            Some(v) => coords.push(v),
            None => return Err(ParseError::BadRange { position }),
        }
    }
    cursor.expect(TokenSet::from_tokens(&[Token::CURVE_END]))?;

    let points = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    Ok(Curve { kind, points })
}

fn parse_extrusion(cursor: &mut Cursor) -> Result<Extrusion, ParseError> {
    let op_token = cursor.expect(TokenSet::from_tokens(&[
        Token::ADD,
        Token::CUT,
        Token::INTERSECT,
    ]))?;
    let op = BoolOp::from_token(op_token).expect("bool op");

    let mut v = [0u8; 2];
    for slot in &mut v {
        *slot = cursor.coord_slot()?;
    }
    let mut t = [0u8; 3];
    for slot in &mut t {
        *slot = cursor.coord_slot()?;
    }
    let mut r = [0i8; 9];
    for slot in &mut r {
        *slot = cursor.numeric_slot(TokenSet::rotation_entries())? as i8;
    }
    let s = cursor.coord_slot()?;
    let mut o = [0u8; 2];
    for slot in &mut o {
        *slot = cursor.coord_slot()?;
    }
    cursor.expect(TokenSet::from_tokens(&[Token::EXTRUSION_END]))?;

    Ok(Extrusion { op, v, t, r, s, o })
}

/// Serializes a structurally valid model to its token sequence.
pub fn serialize_model(model: &CadModel) -> Vec<Token> {
    debug_assert!(model.is_valid(), "serialize_model requires a valid model");
    let mut out = Vec::new();
    for (sketch, extrusion) in &model.pairs {
        serialize_sketch(sketch, &mut out);
        serialize_extrusion(extrusion, &mut out);
    }
    out
}

fn serialize_sketch(sketch: &Sketch, out: &mut Vec<Token>) {
    for face in &sketch.faces {
        for lp in &face.loops {
            for curve in &lp.curves {
                out.push(curve.kind.token());
                for &(x, y) in &curve.points {
                    out.push(Token::coord(x).expect("coordinate in range"));
                    out.push(Token::coord(y).expect("coordinate in range"));
                }
                out.push(Token::CURVE_END);
            }
            out.push(Token::LOOP_END);
        }
        out.push(Token::FACE_END);
    }
    out.push(Token::SKETCH_END);
}

fn serialize_extrusion(extrusion: &Extrusion, out: &mut Vec<Token>) {
    out.push(extrusion.op.token());
    for &v in &extrusion.v {
        out.push(Token::coord(v).expect("v in range"));
    }
    for &t in &extrusion.t {
        out.push(Token::coord(t).expect("t in range"));
    }
    for &r in &extrusion.r {
        out.push(Token::number(r as i16).expect("r in range"));
    }
    out.push(Token::coord(extrusion.s).expect("s in range"));
    for &o in &extrusion.o {
        out.push(Token::coord(o).expect("o in range"));
    }
    out.push(Token::EXTRUSION_END);
}
