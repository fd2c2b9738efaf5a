//! Core sketch-and-extrude modeling (SEM) language: token vocabulary,
//! structured model, lossless parse/serialize, and sequence validation.

mod model;
mod parse;
mod text;
mod validate;
mod vocab;

pub use model::{
    dequantize, dequantize_scale, quantize, BoolOp, CadModel, Curve, CurveKind, Extrusion, Face,
    Loop, Sketch,
};
pub use parse::{parse_model, serialize_model, ParseError};
pub use text::{
    tokens_from_indices, tokens_from_text, tokens_to_indices, tokens_to_text, TextError,
};
pub use validate::{geometric_flags, validate_sequence, GeometricFlag, ValidationReport};
pub use vocab::{Token, TokenSet, NUMBER_OFFSET, VOCAB_SIZE};

/// Token length of the smallest one-circle model: a single-curve loop in a
/// single face plus one extrusion.
pub const MINIMAL_MODEL_LEN: usize = 32;
