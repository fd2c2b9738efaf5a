//! Finite-state automaton over the SEM grammar.
//!
//! The automaton exposes per-step logit masks for constrained decoding.
//! Deterministic payload positions (curve coordinates, extrusion fields) are
//! pre-queued as a run of masks; the transition function is consulted only
//! when the queue empties, carrying the token that emptied it as the action.
//! Branch states (loop may extend or close, model may grow or terminate)
//! return a single union mask from which the next action is drawn.

mod gen;

pub use gen::{random_valid_sequence, BranchProbs, GenError};

use crate::sem::{CurveKind, Token, TokenSet};
use serde_json::json;
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

/// Number of extrusion payload slots after the boolean op:
/// V V T T T R*9 S O O.
const EXTRUSION_TAIL_SLOTS: usize = 17;

/// The named logit masks of the automaton, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskName {
    Init,
    Numbers,
    EndOfCurve,
    PrimitiveStart,
    EndOfLoop,
    EndOfFace,
    EndOfSketch,
    B,
    V,
    T,
    R,
    S,
    O,
    EndOfExtrusion,
    Pad,
}

pub const MASK_NAMES: [MaskName; 15] = [
    MaskName::Init,
    MaskName::Numbers,
    MaskName::EndOfCurve,
    MaskName::PrimitiveStart,
    MaskName::EndOfLoop,
    MaskName::EndOfFace,
    MaskName::EndOfSketch,
    MaskName::B,
    MaskName::V,
    MaskName::T,
    MaskName::R,
    MaskName::S,
    MaskName::O,
    MaskName::EndOfExtrusion,
    MaskName::Pad,
];

impl MaskName {
    /// The token set this named mask allows.
    pub fn allowed(self) -> TokenSet {
        match self {
            MaskName::Init | MaskName::PrimitiveStart => {
                TokenSet::from_tokens(&[Token::LINE, Token::ARC, Token::CIRCLE])
            }
            MaskName::Numbers | MaskName::V | MaskName::T | MaskName::S | MaskName::O => {
                TokenSet::numbers()
            }
            MaskName::EndOfCurve => TokenSet::from_tokens(&[Token::CURVE_END]),
            MaskName::EndOfLoop => TokenSet::from_tokens(&[Token::LOOP_END]),
            MaskName::EndOfFace => TokenSet::from_tokens(&[Token::FACE_END]),
            MaskName::EndOfSketch => TokenSet::from_tokens(&[Token::SKETCH_END]),
            MaskName::B => TokenSet::from_tokens(&[Token::ADD, Token::CUT, Token::INTERSECT]),
            MaskName::R => TokenSet::rotation_entries(),
            MaskName::EndOfExtrusion => TokenSet::from_tokens(&[Token::EXTRUSION_END]),
            MaskName::Pad => TokenSet::from_tokens(&[Token::PAD]),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskName::Init => "Init",
            MaskName::Numbers => "Numbers",
            MaskName::EndOfCurve => "End-of-curve",
            MaskName::PrimitiveStart => "Primitive-start",
            MaskName::EndOfLoop => "End-of-loop",
            MaskName::EndOfFace => "End-of-face",
            MaskName::EndOfSketch => "End-of-sketch",
            MaskName::B => "B",
            MaskName::V => "V",
            MaskName::T => "T",
            MaskName::R => "R",
            MaskName::S => "S",
            MaskName::O => "O",
            MaskName::EndOfExtrusion => "End-of-extrusion",
            MaskName::Pad => "Pad",
        }
    }
}

/// One per-step logit mask: a union of named masks and the token set it
/// admits. Payload steps carry a single name; branch steps carry the names
/// of every legal continuation.
#[derive(Clone, PartialEq, Eq)]
pub struct LogitMask {
    pub names: Vec<MaskName>,
    pub allowed: TokenSet,
}

impl LogitMask {
    pub fn named(name: MaskName) -> LogitMask {
        LogitMask {
            names: vec![name],
            allowed: name.allowed(),
        }
    }

    pub fn union(names: &[MaskName]) -> LogitMask {
        let mut allowed = TokenSet::EMPTY;
        for name in names {
            allowed = allowed.union(name.allowed());
        }
        LogitMask {
            names: names.to_vec(),
            allowed,
        }
    }

    pub fn permits(&self, token: Token) -> bool {
        self.allowed.contains(token)
    }

    pub fn label(&self) -> String {
        self.names
            .iter()
            .map(|n| n.label())
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl fmt::Debug for LogitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Pending masks, consumed front-first; a transition is requested only when
/// the queue is empty.
#[derive(Clone, Debug, Default)]
pub struct MaskQueue {
    pending: VecDeque<LogitMask>,
}

impl MaskQueue {
    pub fn from_masks(masks: Vec<LogitMask>) -> MaskQueue {
        MaskQueue {
            pending: masks.into(),
        }
    }

    pub fn front(&self) -> Option<&LogitMask> {
        self.pending.front()
    }

    pub fn pop(&mut self) -> Option<LogitMask> {
        self.pending.pop_front()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn masks(&self) -> impl Iterator<Item = &LogitMask> {
        self.pending.iter()
    }
}

/// Automaton position. Payload states carry how far through the fixed
/// payload run the sequence has advanced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsaState {
    Init,
    InCurve { kind: CurveKind, remaining: u8 },
    AfterCurveEnd,
    AfterLoopEnd,
    AfterFaceEnd,
    AfterSketchEnd,
    InExtrusion { cursor: u8 },
    AfterExtrusionEnd,
    Terminal,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FsaError {
    #[error("illegal action {token} in state {state:?}")]
    IllegalAction { state: FsaState, token: Token },
    #[error("state {0:?} is not a branch state")]
    NotABranchState(FsaState),
}

fn curve_entry(kind: CurveKind) -> (FsaState, MaskQueue) {
    let payload = 2 * kind.point_count() as u8;
    let mut masks = vec![LogitMask::named(MaskName::Numbers); payload as usize];
    masks.push(LogitMask::named(MaskName::EndOfCurve));
    (
        FsaState::InCurve {
            kind,
            remaining: payload,
        },
        MaskQueue::from_masks(masks),
    )
}

fn branch_entry(state: FsaState) -> (FsaState, MaskQueue) {
    let mask = branch_mask(state).expect("entry into a branch state");
    (state, MaskQueue::from_masks(vec![mask]))
}

/// The union mask offered at a branch state.
pub fn branch_mask(state: FsaState) -> Result<LogitMask, FsaError> {
    match state {
        FsaState::Init => Ok(LogitMask::named(MaskName::Init)),
        FsaState::AfterCurveEnd => Ok(LogitMask::union(&[
            MaskName::PrimitiveStart,
            MaskName::EndOfLoop,
        ])),
        FsaState::AfterLoopEnd => Ok(LogitMask::union(&[
            MaskName::PrimitiveStart,
            MaskName::EndOfFace,
        ])),
        FsaState::AfterFaceEnd => Ok(LogitMask::union(&[
            MaskName::PrimitiveStart,
            MaskName::EndOfSketch,
        ])),
        FsaState::AfterSketchEnd => Ok(LogitMask::named(MaskName::B)),
        FsaState::AfterExtrusionEnd => Ok(LogitMask::union(&[
            MaskName::PrimitiveStart,
            MaskName::Pad,
        ])),
        FsaState::Terminal => Ok(LogitMask::named(MaskName::Pad)),
        other => Err(FsaError::NotABranchState(other)),
    }
}

/// Masks for the extrusion payload run after the boolean op, ending with the
/// extrusion end marker.
fn extrusion_queue() -> MaskQueue {
    let mut masks = Vec::with_capacity(EXTRUSION_TAIL_SLOTS + 1);
    masks.resize(2, LogitMask::named(MaskName::V));
    masks.resize(5, LogitMask::named(MaskName::T));
    masks.resize(14, LogitMask::named(MaskName::R));
    masks.push(LogitMask::named(MaskName::S));
    masks.resize(17, LogitMask::named(MaskName::O));
    masks.push(LogitMask::named(MaskName::EndOfExtrusion));
    MaskQueue::from_masks(masks)
}

/// Branch-level transition: consumes the action that emptied the previous
/// queue and returns the new state with the masks covering every step up to
/// the next branch point.
pub fn fsa_transition(state: FsaState, action: Token) -> Result<(FsaState, MaskQueue), FsaError> {
    let illegal = || FsaError::IllegalAction {
        state,
        token: action,
    };
    match state {
        FsaState::Init | FsaState::AfterCurveEnd | FsaState::AfterLoopEnd
        | FsaState::AfterFaceEnd | FsaState::AfterExtrusionEnd => {
            if let Some(kind) = CurveKind::from_token(action) {
                return Ok(curve_entry(kind));
            }
            match (state, action) {
                (FsaState::AfterCurveEnd, Token::LOOP_END) => {
                    Ok(branch_entry(FsaState::AfterLoopEnd))
                }
                (FsaState::AfterLoopEnd, Token::FACE_END) => {
                    Ok(branch_entry(FsaState::AfterFaceEnd))
                }
                (FsaState::AfterFaceEnd, Token::SKETCH_END) => {
                    Ok(branch_entry(FsaState::AfterSketchEnd))
                }
                (FsaState::AfterExtrusionEnd, Token::PAD) => Ok((
                    FsaState::Terminal,
                    MaskQueue::from_masks(vec![LogitMask::named(MaskName::Pad)]),
                )),
                _ => Err(illegal()),
            }
        }
        FsaState::InCurve { remaining: 0, .. } => {
            if action == Token::CURVE_END {
                Ok(branch_entry(FsaState::AfterCurveEnd))
            } else {
                Err(illegal())
            }
        }
        FsaState::InCurve { .. } => Err(illegal()),
        FsaState::AfterSketchEnd => {
            if action.is_bool_op() {
                Ok((FsaState::InExtrusion { cursor: 1 }, extrusion_queue()))
            } else {
                Err(illegal())
            }
        }
        FsaState::InExtrusion { cursor } => {
            if cursor as usize == EXTRUSION_TAIL_SLOTS + 1 && action == Token::EXTRUSION_END {
                Ok(branch_entry(FsaState::AfterExtrusionEnd))
            } else {
                Err(illegal())
            }
        }
        FsaState::Terminal => {
            if action == Token::PAD {
                Ok((
                    FsaState::Terminal,
                    MaskQueue::from_masks(vec![LogitMask::named(MaskName::Pad)]),
                ))
            } else {
                Err(illegal())
            }
        }
    }
}

/// Driver pairing an [`FsaState`] with its pending [`MaskQueue`], advancing
/// one token at a time. Payload tokens consume queued masks and update the
/// in-state cursors; the token that empties the queue is handed to
/// [`fsa_transition`].
#[derive(Clone, Debug)]
pub struct Automaton {
    state: FsaState,
    queue: MaskQueue,
}

impl Default for Automaton {
    fn default() -> Self {
        Self::new()
    }
}

impl Automaton {
    pub fn new() -> Automaton {
        Automaton {
            state: FsaState::Init,
            queue: MaskQueue::from_masks(vec![LogitMask::named(MaskName::Init)]),
        }
    }

    pub fn state(&self) -> FsaState {
        self.state
    }

    /// The mask constraining the next token.
    pub fn current_mask(&self) -> &LogitMask {
        self.queue.front().expect("queue never left empty")
    }

    /// True once the automaton has consumed a complete model, i.e. more
    /// input is optional.
    pub fn at_completion_point(&self) -> bool {
        matches!(
            self.state,
            FsaState::AfterExtrusionEnd | FsaState::Terminal
        )
    }

    /// Feeds one token. Returns the mask consumed by this token.
    pub fn step(&mut self, token: Token) -> Result<LogitMask, FsaError> {
        let mask = self.queue.pop().expect("queue never left empty");
        if !mask.permits(token) {
            return Err(FsaError::IllegalAction {
                state: self.state,
                token,
            });
        }
        if self.queue.is_empty() {
            let (state, queue) = fsa_transition(self.state, token)?;
            self.state = state;
            self.queue = queue;
        } else {
            // Mid-payload bookkeeping: advance the in-state cursor.
            self.state = match self.state {
                FsaState::InCurve { kind, remaining } => FsaState::InCurve {
                    kind,
                    remaining: remaining - 1,
                },
                FsaState::InExtrusion { cursor } => FsaState::InExtrusion { cursor: cursor + 1 },
                other => other,
            };
        }
        Ok(mask)
    }

    /// Replays a full sequence, returning the per-step masks.
    pub fn replay(tokens: &[Token]) -> Result<Vec<LogitMask>, FsaError> {
        let mut automaton = Automaton::new();
        let mut masks = Vec::with_capacity(tokens.len());
        for &t in tokens {
            masks.push(automaton.step(t)?);
        }
        Ok(masks)
    }
}

/// JSON description of the automaton: states, the 15 named masks, and the
/// branch edges, for documentation and visual tooling.
pub fn export_json() -> serde_json::Value {
    let masks: serde_json::Map<String, serde_json::Value> = MASK_NAMES
        .iter()
        .map(|name| {
            (
                name.label().to_string(),
                json!(name.allowed().iter().map(|t| t.index()).collect::<Vec<_>>()),
            )
        })
        .collect();

    let states = json!([
        "Init",
        "InCurve(line)",
        "InCurve(arc)",
        "InCurve(circle)",
        "AfterCurveEnd",
        "AfterLoopEnd",
        "AfterFaceEnd",
        "AfterSketchEnd",
        "InExtrusion",
        "AfterExtrusionEnd",
        "Terminal",
    ]);

    let edge = |from: &str, action: &str, to: &str, queue: Vec<String>| {
        json!({"from": from, "action": action, "to": to, "queue": queue})
    };
    let curve_queue = |kind: CurveKind| {
        let mut q = vec!["Numbers".to_string(); 2 * kind.point_count()];
        q.push("End-of-curve".to_string());
        q
    };
    let branch_queue = |state: FsaState| vec![branch_mask(state).unwrap().label()];
    let mut edges = Vec::new();
    for from in ["Init", "AfterCurveEnd", "AfterLoopEnd", "AfterFaceEnd", "AfterExtrusionEnd"] {
        for (kind, label) in [
            (CurveKind::Line, "line"),
            (CurveKind::Arc, "arc"),
            (CurveKind::Circle, "circle"),
        ] {
            edges.push(edge(from, label, &format!("InCurve({label})"), curve_queue(kind)));
        }
    }
    for (label, _) in [("line", 1), ("arc", 2), ("circle", 4)] {
        edges.push(edge(
            &format!("InCurve({label})"),
            "<curve_end>",
            "AfterCurveEnd",
            branch_queue(FsaState::AfterCurveEnd),
        ));
    }
    edges.push(edge("AfterCurveEnd", "<loop_end>", "AfterLoopEnd", branch_queue(FsaState::AfterLoopEnd)));
    edges.push(edge("AfterLoopEnd", "<face_end>", "AfterFaceEnd", branch_queue(FsaState::AfterFaceEnd)));
    edges.push(edge("AfterFaceEnd", "<sketch_end>", "AfterSketchEnd", branch_queue(FsaState::AfterSketchEnd)));
    for op in ["add", "cut", "intersect"] {
        edges.push(edge(
            "AfterSketchEnd",
            op,
            "InExtrusion",
            extrusion_queue().masks().map(|m| m.label()).collect(),
        ));
    }
    edges.push(edge(
        "InExtrusion",
        "<extrusion_end>",
        "AfterExtrusionEnd",
        branch_queue(FsaState::AfterExtrusionEnd),
    ));
    edges.push(edge("AfterExtrusionEnd", "pad", "Terminal", vec!["Pad".to_string()]));
    edges.push(edge("Terminal", "pad", "Terminal", vec!["Pad".to_string()]));

    json!({
        "schema_version": 1,
        "states": states,
        "masks": masks,
        "edges": edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{parse_model, serialize_model, Token};

    #[test]
    fn mask_table_fidelity() {
        let contents: Vec<(MaskName, Vec<u8>)> = vec![
            (MaskName::Init, vec![1, 2, 3]),
            (MaskName::Numbers, (13..=76).collect()),
            (MaskName::EndOfCurve, vec![4]),
            (MaskName::PrimitiveStart, vec![1, 2, 3]),
            (MaskName::EndOfLoop, vec![5]),
            (MaskName::EndOfFace, vec![6]),
            (MaskName::EndOfSketch, vec![7]),
            (MaskName::B, vec![8, 9, 10]),
            (MaskName::V, (13..=76).collect()),
            (MaskName::T, (13..=76).collect()),
            (MaskName::R, vec![12, 13, 14]),
            (MaskName::S, (13..=76).collect()),
            (MaskName::O, (13..=76).collect()),
            (MaskName::EndOfExtrusion, vec![11]),
            (MaskName::Pad, vec![0]),
        ];
        assert_eq!(contents.len(), 15);
        for (name, expected) in contents {
            let actual: Vec<u8> = name.allowed().iter().map(|t| t.index()).collect();
            assert_eq!(actual, expected, "mask {name:?} diverges from the table");
        }
    }

    #[test]
    fn init_line_queues_two_numbers_and_curve_end() {
        let (state, queue) = fsa_transition(FsaState::Init, Token::LINE).unwrap();
        assert_eq!(
            state,
            FsaState::InCurve {
                kind: CurveKind::Line,
                remaining: 2
            }
        );
        let labels: Vec<String> = queue.masks().map(|m| m.label()).collect();
        assert_eq!(labels, vec!["Numbers", "Numbers", "End-of-curve"]);
    }

    #[test]
    fn sketch_end_b_queues_full_extrusion_run() {
        let (state, queue) = fsa_transition(FsaState::AfterSketchEnd, Token::ADD).unwrap();
        assert_eq!(state, FsaState::InExtrusion { cursor: 1 });
        let labels: Vec<String> = queue.masks().map(|m| m.label()).collect();
        let mut expected: Vec<String> = Vec::new();
        expected.extend(std::iter::repeat("V".to_string()).take(2));
        expected.extend(std::iter::repeat("T".to_string()).take(3));
        expected.extend(std::iter::repeat("R".to_string()).take(9));
        expected.push("S".to_string());
        expected.extend(std::iter::repeat("O".to_string()).take(2));
        expected.push("End-of-extrusion".to_string());
        assert_eq!(labels, expected);
        assert_eq!(queue.len(), 18);
        for m in queue.masks().skip(5).take(9) {
            assert_eq!(m.allowed, TokenSet::rotation_entries());
        }
    }

    #[test]
    fn pad_transitions_to_terminal() {
        let (state, queue) = fsa_transition(FsaState::AfterExtrusionEnd, Token::PAD).unwrap();
        assert_eq!(state, FsaState::Terminal);
        assert_eq!(queue.front().unwrap().label(), "Pad");
        // Terminal loops on pad only.
        let (state2, _) = fsa_transition(FsaState::Terminal, Token::PAD).unwrap();
        assert_eq!(state2, FsaState::Terminal);
        assert!(fsa_transition(FsaState::Terminal, Token::LINE).is_err());
    }

    #[test]
    fn branch_masks_match_grammar_closure() {
        let cases = [
            (FsaState::AfterCurveEnd, vec![1u8, 2, 3, 5]),
            (FsaState::AfterLoopEnd, vec![1, 2, 3, 6]),
            (FsaState::AfterFaceEnd, vec![1, 2, 3, 7]),
            (FsaState::AfterExtrusionEnd, vec![0, 1, 2, 3]),
        ];
        for (state, expected) in cases {
            let mask = branch_mask(state).unwrap();
            let actual: Vec<u8> = mask.allowed.iter().map(|t| t.index()).collect();
            assert_eq!(actual, expected, "branch at {state:?}");
        }
        assert!(matches!(
            branch_mask(FsaState::InExtrusion { cursor: 3 }),
            Err(FsaError::NotABranchState(_))
        ));
    }

    #[test]
    fn illegal_actions_rejected() {
        assert!(matches!(
            fsa_transition(FsaState::Init, Token::PAD),
            Err(FsaError::IllegalAction { .. })
        ));
        assert!(matches!(
            fsa_transition(FsaState::AfterSketchEnd, Token::LINE),
            Err(FsaError::IllegalAction { .. })
        ));
    }

    #[test]
    fn replay_accepts_serialized_models_and_reports_masks() {
        let tokens = crate::fsa::gen::tests::sample_sequence();
        let masks = Automaton::replay(&tokens).unwrap();
        assert_eq!(masks.len(), tokens.len());
        assert_eq!(masks[0].label(), "Init");
        // Sequence parses too: generator and parser agree.
        parse_model(&tokens).unwrap();
        let model = parse_model(&tokens).unwrap();
        assert_eq!(serialize_model(&model), tokens);
    }

    #[test]
    fn replay_rejects_misnested_sequence() {
        // Close a face before closing the loop.
        let tokens = vec![
            Token::LINE,
            Token::coord(1).unwrap(),
            Token::coord(2).unwrap(),
            Token::CURVE_END,
            Token::FACE_END,
        ];
        assert!(matches!(
            Automaton::replay(&tokens),
            Err(FsaError::IllegalAction { .. })
        ));
    }

    #[test]
    fn export_lists_15_masks() {
        let doc = export_json();
        assert_eq!(doc["masks"].as_object().unwrap().len(), 15);
        assert_eq!(doc["schema_version"], 1);
        assert!(doc["edges"].as_array().unwrap().len() > 20);
    }
}
