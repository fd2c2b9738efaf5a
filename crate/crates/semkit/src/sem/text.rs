//! Plain-text forms for token sequences: whitespace-separated symbols and
//! integer-index arrays. Both round-trip exactly.

use super::vocab::{Token, VOCAB_SIZE};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { position: usize, symbol: String },
    #[error("token index {index} out of range at position {position}")]
    IndexOutOfRange { position: usize, index: u32 },
}

/// Renders tokens as whitespace-separated symbols, e.g.
/// `line 10 20 <curve_end> ...`.
pub fn tokens_to_text(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.symbol())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses whitespace-separated symbols back to tokens.
pub fn tokens_from_text(text: &str) -> Result<Vec<Token>, TextError> {
    text.split_whitespace()
        .enumerate()
        .map(|(position, sym)| {
            Token::from_symbol(sym).ok_or_else(|| TextError::UnknownSymbol {
                position,
                symbol: sym.to_string(),
            })
        })
        .collect()
}

pub fn tokens_to_indices(tokens: &[Token]) -> Vec<u8> {
    tokens.iter().map(|t| t.index()).collect()
}

pub fn tokens_from_indices(indices: &[u32]) -> Result<Vec<Token>, TextError> {
    indices
        .iter()
        .enumerate()
        .map(|(position, &index)| {
            if index < VOCAB_SIZE as u32 {
                Ok(Token::new(index as u8).expect("checked range"))
            } else {
                Err(TextError::IndexOutOfRange { position, index })
            }
        })
        .collect()
}
