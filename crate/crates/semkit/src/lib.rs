//! Toolkit for sketch-and-extrude modeling (SEM) sequences: a formal token
//! language with parser and validator, a grammar automaton for constrained
//! decoding, primitive-level tokenizers with a vector-quantized codec, and a
//! geometric evaluation suite. Everything runs hermetically on synthetic or
//! ingested corpora; the decoding harness takes any next-token scorer.

pub mod corpus;
pub mod decode;
pub mod fsa;
pub mod geometry;
pub mod metrics;
pub mod sem;
pub mod tokenize;
pub mod vq;
