//! The 77-symbol token vocabulary for sketch-and-extrude sequences.
//!
//! Index layout: 0 = pad, 1..3 = curve identifiers, 4..7 = structural end
//! markers, 8..10 = boolean operations, 11 = extrusion end, 12 = the number
//! -1, 13..76 = the numbers 0..63.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Total number of distinct tokens.
pub const VOCAB_SIZE: usize = 77;

/// Offset added to a numeric value to obtain its token index
/// (`value + NUMBER_OFFSET`), valid for values in -1..=63.
pub const NUMBER_OFFSET: i16 = 13;

/// One discrete sequence symbol, stored as its vocabulary index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(u8);

impl Token {
    pub const PAD: Token = Token(0);
    pub const LINE: Token = Token(1);
    pub const ARC: Token = Token(2);
    pub const CIRCLE: Token = Token(3);
    pub const CURVE_END: Token = Token(4);
    pub const LOOP_END: Token = Token(5);
    pub const FACE_END: Token = Token(6);
    pub const SKETCH_END: Token = Token(7);
    pub const ADD: Token = Token(8);
    pub const CUT: Token = Token(9);
    pub const INTERSECT: Token = Token(10);
    pub const EXTRUSION_END: Token = Token(11);

    /// Builds a token from a raw vocabulary index.
    pub fn new(index: u8) -> Option<Token> {
        if (index as usize) < VOCAB_SIZE {
            Some(Token(index))
        } else {
            None
        }
    }

    /// Token for a number in -1..=63.
    pub fn number(value: i16) -> Option<Token> {
        if (-1..=63).contains(&value) {
            Some(Token((value + NUMBER_OFFSET) as u8))
        } else {
            None
        }
    }

    /// Token for an unsigned coordinate/parameter value in 0..=63.
    pub fn coord(value: u8) -> Option<Token> {
        if value <= 63 {
            Some(Token(value + NUMBER_OFFSET as u8))
        } else {
            None
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Numeric value for number tokens (-1..=63), `None` otherwise.
    pub fn number_value(self) -> Option<i16> {
        if self.0 >= 12 {
            Some(self.0 as i16 - NUMBER_OFFSET)
        } else {
            None
        }
    }

    /// Unsigned value for the 0..=63 number tokens, `None` for everything
    /// else including the -1 token.
    pub fn coord_value(self) -> Option<u8> {
        if self.0 >= 13 {
            Some(self.0 - NUMBER_OFFSET as u8)
        } else {
            None
        }
    }

    pub fn is_number(self) -> bool {
        self.0 >= 12
    }

    pub fn is_curve_kind(self) -> bool {
        (1..=3).contains(&self.0)
    }

    pub fn is_bool_op(self) -> bool {
        (8..=10).contains(&self.0)
    }

    /// The printable symbol for this token.
    pub fn symbol(self) -> String {
        match self.0 {
            0 => "pad".to_string(),
            1 => "line".to_string(),
            2 => "arc".to_string(),
            3 => "circle".to_string(),
            4 => "<curve_end>".to_string(),
            5 => "<loop_end>".to_string(),
            6 => "<face_end>".to_string(),
            7 => "<sketch_end>".to_string(),
            8 => "add".to_string(),
            9 => "cut".to_string(),
            10 => "intersect".to_string(),
            11 => "<extrusion_end>".to_string(),
            n => (n as i16 - NUMBER_OFFSET).to_string(),
        }
    }

    /// Inverse of [`Token::symbol`].
    pub fn from_symbol(sym: &str) -> Option<Token> {
        match sym {
            "pad" => Some(Token::PAD),
            "line" => Some(Token::LINE),
            "arc" => Some(Token::ARC),
            "circle" => Some(Token::CIRCLE),
            "<curve_end>" => Some(Token::CURVE_END),
            "<loop_end>" => Some(Token::LOOP_END),
            "<face_end>" => Some(Token::FACE_END),
            "<sketch_end>" => Some(Token::SKETCH_END),
            "add" => Some(Token::ADD),
            "cut" => Some(Token::CUT),
            "intersect" => Some(Token::INTERSECT),
            "<extrusion_end>" => Some(Token::EXTRUSION_END),
            _ => sym.parse::<i16>().ok().and_then(Token::number),
        }
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Set of token indices, packed into a 128-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TokenSet(u128);

impl TokenSet {
    pub const EMPTY: TokenSet = TokenSet(0);

    pub fn from_tokens(tokens: &[Token]) -> TokenSet {
        let mut bits = 0u128;
        for t in tokens {
            bits |= 1u128 << t.index();
        }
        TokenSet(bits)
    }

    /// All number tokens 0..=63 (indices 13..=76).
    pub fn numbers() -> TokenSet {
        let mut bits = 0u128;
        for i in 13..VOCAB_SIZE {
            bits |= 1u128 << i;
        }
        TokenSet(bits)
    }

    /// Rotation entries: -1, 0, 1 (indices 12, 13, 14).
    pub fn rotation_entries() -> TokenSet {
        TokenSet(0b111 << 12)
    }

    pub fn contains(self, token: Token) -> bool {
        self.0 & (1u128 << token.index()) != 0
    }

    pub fn insert(&mut self, token: Token) {
        self.0 |= 1u128 << token.index();
    }

    pub fn union(self, other: TokenSet) -> TokenSet {
        TokenSet(self.0 | other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Token> {
        (0..VOCAB_SIZE as u8).filter_map(move |i| {
            if self.0 & (1u128 << i) != 0 {
                Some(Token(i))
            } else {
                None
            }
        })
    }
}

impl fmt::Debug for TokenSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<Token> for TokenSet {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        let mut set = TokenSet::EMPTY;
        for t in iter {
            set.insert(t);
        }
        set
    }
}
