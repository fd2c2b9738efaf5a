//! Primitive-level segmentation of sketch-extrusion pairs, pooling-mask
//! construction, a BPE baseline, and compression-ratio accounting.
//!
//! A pair's token stream is partitioned into primitive spans: sketch
//! primitives at curve, loop, or whole-sketch granularity (each span absorbs
//! the run of end tokens that follows it), and always exactly three
//! extrusion parts. At most 9 sketch primitives are allowed per pair; with
//! the 3 fixed extrusion slots this caps a pair at 12 primitives.

mod bpe;

pub use bpe::{bpe_fit, BpeError, BpeModel};

use crate::sem::{parse_model, ParseError, Token};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on primitives per sketch-extrusion pair.
pub const MAX_PRIMITIVES: usize = 12;
/// Sketch primitives may use at most this many of the 12 slots; the
/// remaining 3 are fixed extrusion parts.
pub const MAX_SKETCH_PRIMITIVES: usize = 9;

/// Segmentation granularity for sketch primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One primitive per curve.
    Curve,
    /// One primitive per loop.
    Loop,
    /// The whole sketch as a single primitive.
    Single,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Curve => "curve",
            Variant::Loop => "loop",
            Variant::Single => "single",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    SketchPrimitive,
    ExtrusionPart1,
    ExtrusionPart2,
    ExtrusionPart3,
}

/// Half-open token range of one primitive within a pair's stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSpan {
    pub pair_index: usize,
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

impl PrimitiveSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("pair has {count} sketch primitives, cap is {MAX_SKETCH_PRIMITIVES}")]
    TooManyPrimitives { count: usize },
    #[error("spans overlap at token {position}")]
    SpanOverlap { position: usize },
    #[error("expected exactly one sketch-extrusion pair")]
    NotASinglePair,
    #[error("pair tokens do not parse: {0}")]
    Unparseable(#[from] ParseError),
}

/// Splits one pair's token stream into primitive spans under the given
/// variant. Spans are disjoint, ordered, and exactly cover the stream.
pub fn segment_primitives(
    pair_tokens: &[Token],
    variant: Variant,
) -> Result<Vec<PrimitiveSpan>, TokenizeError> {
    segment_pair_at(pair_tokens, variant, 0, 0)
}

/// Parses a full model sequence and segments every pair. Trailing pads are
/// not part of any primitive and are rejected here.
pub fn segment_sequence(
    tokens: &[Token],
    variant: Variant,
) -> Result<Vec<PrimitiveSpan>, TokenizeError> {
    let model = parse_model(tokens)?;
    let mut spans = Vec::new();
    let mut offset = 0;
    for pair_index in 0..model.pairs.len() {
        let pair_len = pair_token_len(tokens, offset);
        let pair_spans =
            segment_pair_at(&tokens[offset..offset + pair_len], variant, pair_index, offset)?;
        spans.extend(pair_spans);
        offset += pair_len;
    }
    Ok(spans)
}

/// The pair ends right after its `<extrusion_end>`.
fn pair_token_len(tokens: &[Token], offset: usize) -> usize {
    let end = tokens[offset..]
        .iter()
        .position(|&t| t == Token::EXTRUSION_END)
        .expect("parsed model ensures an extrusion end");
    end + 1
}

fn segment_pair_at(
    pair_tokens: &[Token],
    variant: Variant,
    pair_index: usize,
    base: usize,
) -> Result<Vec<PrimitiveSpan>, TokenizeError> {
    let model = parse_model(pair_tokens)?;
    if model.pairs.len() != 1 {
        return Err(TokenizeError::NotASinglePair);
    }
    let sketch_end = pair_tokens
        .iter()
        .position(|&t| t == Token::SKETCH_END)
        .expect("parsed pair has a sketch end")
        + 1;

    let mut spans = Vec::new();
    let mut cursor = 0usize;
    let mut open = |spans: &mut Vec<PrimitiveSpan>, end: usize| {
        spans.push(PrimitiveSpan {
            pair_index,
            start: base + cursor,
            end: base + end,
            kind: SpanKind::SketchPrimitive,
        });
        cursor = end;
    };

    match variant {
        Variant::Single => {
            open(&mut spans, sketch_end);
        }
        Variant::Curve => {
            // Break before each curve identifier; every span then carries
            // its curve payload plus the trailing end-token run.
            let mut i = 1;
            while i < sketch_end {
                if pair_tokens[i].is_curve_kind() {
                    open(&mut spans, i);
                }
                i += 1;
            }
            open(&mut spans, sketch_end);
        }
        Variant::Loop => {
            // Break before a curve identifier that opens a new loop, i.e.
            // one following a loop or face end.
            let mut i = 1;
            while i < sketch_end {
                if pair_tokens[i].is_curve_kind()
                    && matches!(pair_tokens[i - 1], Token::LOOP_END | Token::FACE_END)
                {
                    open(&mut spans, i);
                }
                i += 1;
            }
            open(&mut spans, sketch_end);
        }
    }

    if spans.len() > MAX_SKETCH_PRIMITIVES {
        return Err(TokenizeError::TooManyPrimitives { count: spans.len() });
    }

    // Extrusion parts: [B V V T T T], [R x9], [S O O <extrusion_end>].
    let b = sketch_end;
    if pair_tokens.len() - b != 19 {
        return Err(TokenizeError::NotASinglePair);
    }
    spans.push(PrimitiveSpan {
        pair_index,
        start: base + b,
        end: base + b + 6,
        kind: SpanKind::ExtrusionPart1,
    });
    spans.push(PrimitiveSpan {
        pair_index,
        start: base + b + 6,
        end: base + b + 15,
        kind: SpanKind::ExtrusionPart2,
    });
    spans.push(PrimitiveSpan {
        pair_index,
        start: base + b + 15,
        end: base + b + 19,
        kind: SpanKind::ExtrusionPart3,
    });
    Ok(spans)
}

/// Binary pooling matrix: one row per primitive slot (up to 12), with ones
/// exactly on the primitive's span. Rows beyond the active count stay zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingMask {
    pub rows: Vec<Vec<bool>>,
    pub active: usize,
    pub sequence_length: usize,
}

impl PoolingMask {
    pub fn row(&self, r: usize) -> &[bool] {
        &self.rows[r]
    }

    pub fn is_active(&self, r: usize) -> bool {
        r < self.active
    }
}

/// Builds the pooling mask for one pair's spans. Span positions are taken
/// relative to the pair, so pass spans from [`segment_primitives`].
pub fn pooling_masks(
    spans: &[PrimitiveSpan],
    sequence_length: usize,
) -> Result<PoolingMask, TokenizeError> {
    assert!(spans.len() <= MAX_PRIMITIVES, "span count exceeds the slot cap");
    let mut rows = vec![vec![false; sequence_length]; MAX_PRIMITIVES];
    let mut covered = vec![false; sequence_length];
    for (r, span) in spans.iter().enumerate() {
        assert!(span.end <= sequence_length, "span past the sequence");
        for i in span.start..span.end {
            if covered[i] {
                return Err(TokenizeError::SpanOverlap { position: i });
            }
            covered[i] = true;
            rows[r][i] = true;
        }
    }
    Ok(PoolingMask {
        rows,
        active: spans.len(),
        sequence_length,
    })
}

/// A tokenization scheme whose compression is measured against raw tokens.
pub enum Compressor<'a> {
    Raw,
    Primitive(Variant),
    Bpe(&'a BpeModel),
}

/// Mean over the corpus of `100 * units / raw_len` per sequence, where
/// units are primitive spans, BPE symbols, or raw tokens. 100 means no
/// compression.
pub fn compression_ratio(
    compressor: &Compressor,
    corpus: &[Vec<Token>],
) -> Result<f64, TokenizeError> {
    assert!(!corpus.is_empty(), "compression over an empty corpus");
    let mut total = 0.0;
    for seq in corpus {
        let units = match compressor {
            Compressor::Raw => seq.len(),
            Compressor::Primitive(variant) => segment_sequence(seq, *variant)?.len(),
            Compressor::Bpe(model) => model.encode(seq).len(),
        };
        total += 100.0 * units as f64 / seq.len() as f64;
    }
    Ok(total / corpus.len() as f64)
}

/// JSONL record for one sequence's segmentation.
pub fn segmentation_record(id: &str, variant: Variant, spans: &[PrimitiveSpan]) -> serde_json::Value {
    serde_json::json!({
        "id": id,
        "variant": variant.name(),
        "spans": spans,
    })
}
