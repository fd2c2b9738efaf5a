//! Seeded random generation of grammar-valid sequences, used for hermetic
//! corpus synthesis. Every draw stays inside the active logit mask; branch
//! decisions (extend vs. close) follow configurable probabilities under a
//! token budget.

use crate::sem::{Token, MINIMAL_MODEL_LEN};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Minimal remaining tokens needed to close the model from just after a
/// curve end: loop end, face end, sketch end, then a full extrusion.
const CLOSE_COST: usize = 22;
/// Token costs of one curve including its end marker.
const LINE_COST: usize = 4;
const ARC_COST: usize = 6;
const CIRCLE_COST: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("length budget {budget} cannot fit a complete model")]
    BudgetExhausted { budget: usize },
}

/// Branch probabilities and sampling knobs for the generator.
#[derive(Clone, Debug)]
pub struct BranchProbs {
    /// Probability of adding another curve to the open loop.
    pub extend_loop: f64,
    /// Probability of adding another loop to the open face.
    pub extend_face: f64,
    /// Probability of adding another face to the open sketch.
    pub extend_sketch: f64,
    /// Probability of starting another sketch-extrusion pair.
    pub extend_model: f64,
    /// Relative weights for picking line / arc / circle curves.
    pub kind_weights: [f64; 3],
    /// Draw rotation entries as a random signed permutation matrix instead
    /// of nine independent values; keeps extrusions geometrically usable.
    pub orthonormal_r: bool,
}

impl Default for BranchProbs {
    fn default() -> Self {
        BranchProbs {
            extend_loop: 0.6,
            extend_face: 0.25,
            extend_sketch: 0.2,
            extend_model: 0.15,
            kind_weights: [0.45, 0.2, 0.35],
            orthonormal_r: true,
        }
    }
}

impl BranchProbs {
    /// Single-pair models only.
    pub fn single_pair(mut self) -> Self {
        self.extend_model = 0.0;
        self
    }
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    probs: &'a BranchProbs,
    out: Vec<Token>,
    budget: usize,
}

impl Gen<'_> {
    fn emit(&mut self, token: Token) {
        debug_assert!(self.budget > 0, "emitting past the budget");
        self.out.push(token);
        self.budget -= 1;
    }

    fn coord(&mut self) -> u8 {
        self.rng.random_range(0..64u8)
    }

    fn emit_coord_pair(&mut self, p: (u8, u8)) {
        self.emit(Token::coord(p.0).expect("coord"));
        self.emit(Token::coord(p.1).expect("coord"));
    }

    fn random_point(&mut self) -> (u8, u8) {
        (self.coord(), self.coord())
    }

    fn point_not(&mut self, avoid: &[(u8, u8)]) -> (u8, u8) {
        for _ in 0..16 {
            let p = self.random_point();
            if !avoid.contains(&p) {
                return p;
            }
        }
        // Degenerate-avoidance fallback: nudge one coordinate.
        let base = avoid.first().copied().unwrap_or((0, 0));
        ((base.0 + 1) & 63, base.1)
    }

    /// A curve kind drawn by weight among the affordable ones.
    fn pick_kind(&mut self, affordable: &[(usize, f64)]) -> usize {
        let total: f64 = affordable.iter().map(|&(_, w)| w).sum();
        let mut draw = self.rng.random::<f64>() * total;
        for &(kind, w) in affordable {
            if draw < w {
                return kind;
            }
            draw -= w;
        }
        affordable.last().expect("non-empty").0
    }

    /// Emits one curve; returns (kind index, new pen position).
    fn emit_curve(&mut self, kind: usize, pen: Option<(u8, u8)>) -> (u8, u8) {
        match kind {
            0 => {
                let avoid: Vec<_> = pen.into_iter().collect();
                let end = self.point_not(&avoid);
                self.emit(Token::LINE);
                self.emit_coord_pair(end);
                self.emit(Token::CURVE_END);
                end
            }
            1 => {
                let mut avoid: Vec<_> = pen.into_iter().collect();
                let mid = self.point_not(&avoid);
                avoid.push(mid);
                let end = self.point_not(&avoid);
                self.emit(Token::ARC);
                self.emit_coord_pair(mid);
                self.emit_coord_pair(end);
                self.emit(Token::CURVE_END);
                end
            }
            _ => {
                let cx = self.rng.random_range(8..56u8);
                let cy = self.rng.random_range(8..56u8);
                let max_r = [cx, cy, 63 - cx, 63 - cy].into_iter().min().unwrap().min(20);
                let r = self.rng.random_range(2..=max_r.max(2));
                self.emit(Token::CIRCLE);
                self.emit_coord_pair((cx + r, cy));
                self.emit_coord_pair((cx, cy + r));
                self.emit_coord_pair((cx - r, cy));
                self.emit_coord_pair((cx, cy - r));
                self.emit(Token::CURVE_END);
                (cx, cy - r)
            }
        }
    }

    fn affordable_kinds(&self) -> Vec<(usize, f64)> {
        let costs = [LINE_COST, ARC_COST, CIRCLE_COST];
        (0..3)
            .filter(|&k| self.budget >= costs[k] + CLOSE_COST)
            .map(|k| (k, self.probs.kind_weights[k]))
            .collect()
    }

    /// One loop. `curves_in_sketch` counts toward the per-pair primitive cap.
    fn gen_loop(&mut self, curves_in_sketch: &mut usize) {
        let force_single = self.probs.extend_loop <= 0.0;
        let mut pen: Option<(u8, u8)> = None;
        let mut kinds_so_far: Vec<usize> = Vec::new();

        // A single-curve loop only encloses area as a circle.
        let first_kind = if force_single && self.budget >= CIRCLE_COST + CLOSE_COST {
            2
        } else {
            let affordable = self.affordable_kinds();
            self.pick_kind(&affordable)
        };
        pen = Some(self.emit_curve(first_kind, pen));
        kinds_so_far.push(first_kind);
        *curves_in_sketch += 1;

        loop {
            let affordable = self.affordable_kinds();
            let can_extend = !affordable.is_empty() && *curves_in_sketch < 9;
            if !can_extend {
                break;
            }
            let degenerate_if_closed = match kinds_so_far.as_slice() {
                [0] | [1] => true,
                [0, 0] => true,
                _ => false,
            };
            if !(degenerate_if_closed && !force_single)
                && !(self.rng.random::<f64>() < self.probs.extend_loop)
            {
                break;
            }
            let kind = if kinds_so_far == [0, 0] {
                // Avoid a zero-area two-line loop where possible.
                affordable
                    .iter()
                    .find(|&&(k, _)| k != 0)
                    .map(|&(k, _)| k)
                    .unwrap_or_else(|| self.pick_kind(&affordable))
            } else {
                self.pick_kind(&affordable)
            };
            pen = Some(self.emit_curve(kind, pen));
            kinds_so_far.push(kind);
            *curves_in_sketch += 1;
        }
        self.emit(Token::LOOP_END);
    }

    fn gen_sketch(&mut self) {
        let mut curves_in_sketch = 0usize;
        loop {
            // One face: loops until the face closes.
            loop {
                self.gen_loop(&mut curves_in_sketch);
                let can_extend =
                    self.budget >= LINE_COST + CLOSE_COST + 1 && curves_in_sketch < 9;
                if can_extend && self.rng.random::<f64>() < self.probs.extend_face {
                    continue;
                }
                break;
            }
            self.emit(Token::FACE_END);
            let can_extend = self.budget >= LINE_COST + CLOSE_COST && curves_in_sketch < 9;
            if can_extend && self.rng.random::<f64>() < self.probs.extend_sketch {
                continue;
            }
            break;
        }
        self.emit(Token::SKETCH_END);
    }

    fn signed_permutation(&mut self) -> [i8; 9] {
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let perm = perms[self.rng.random_range(0..6)];
        let mut r = [0i8; 9];
        for (row, &col) in perm.iter().enumerate() {
            let sign = if self.rng.random::<bool>() { 1 } else { -1 };
            r[row * 3 + col] = sign;
        }
        r
    }

    fn gen_extrusion(&mut self) {
        let op = [Token::ADD, Token::CUT, Token::INTERSECT][self.rng.random_range(0..3)];
        self.emit(op);
        let v0 = self.coord();
        let mut v1 = self.coord();
        let mut retries = 0;
        while v1 == v0 && retries < 8 {
            v1 = self.coord();
            retries += 1;
        }
        if v1 == v0 {
            v1 = (v0 + 1) & 63;
        }
        self.emit(Token::coord(v0).expect("v"));
        self.emit(Token::coord(v1).expect("v"));
        for _ in 0..3 {
            let t = self.coord();
            self.emit(Token::coord(t).expect("t"));
        }
        let r = if self.probs.orthonormal_r {
            self.signed_permutation()
        } else {
            let mut r = [0i8; 9];
            for slot in &mut r {
                *slot = self.rng.random_range(-1..=1i8);
            }
            r
        };
        for entry in r {
            self.emit(Token::number(entry as i16).expect("r"));
        }
        let s = self.coord();
        self.emit(Token::coord(s).expect("s"));
        for _ in 0..2 {
            let o = self.coord();
            self.emit(Token::coord(o).expect("o"));
        }
        self.emit(Token::EXTRUSION_END);
    }
}

/// Generates one grammar-valid token sequence within `length_budget` tokens.
pub fn random_valid_sequence(
    seed: u64,
    length_budget: usize,
    probs: &BranchProbs,
) -> Result<Vec<Token>, GenError> {
    if length_budget < MINIMAL_MODEL_LEN {
        return Err(GenError::BudgetExhausted {
            budget: length_budget,
        });
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        probs,
        out: Vec::with_capacity(length_budget),
        budget: length_budget,
    };
    loop {
        g.gen_sketch();
        g.gen_extrusion();
        let can_extend = g.budget >= MINIMAL_MODEL_LEN;
        if can_extend && g.rng.random::<f64>() < g.probs.extend_model {
            continue;
        }
        break;
    }
    Ok(g.out)
}
