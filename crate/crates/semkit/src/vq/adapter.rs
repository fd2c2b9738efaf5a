//! Bidirectional adapters tying codebook vectors to the frozen backbone:
//! the up-map projects a codebook vector into the backbone's token space
//! where the frozen logit layer picks an id; the down-map reconstructs the
//! codebook vector from that id's frozen embedding. Trained with a vector
//! reconstruction loss through a temperature-annealed softmax relaxation of
//! the argmax (straight-through), codec and backbone frozen.

use super::backbone::MockBackbone;
use super::codec::{VqCodec, SEPARATOR_ID};
use super::graph::{Graph, ParamSet};
use super::mat::Mat;
use super::train::Adam;
use super::VqError;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterPair {
    /// d_vq x d_tok.
    pub up: Mat,
    /// d_tok x d_vq.
    pub down: Mat,
}

impl AdapterPair {
    /// Backbone id for a codec vector: argmax over the frozen logits of the
    /// up-mapped vector, never the reserved separator id.
    pub fn map_to_id(&self, vector: &[f64], backbone: &MockBackbone) -> u32 {
        let up = Mat::from_vec(1, vector.len(), vector.to_vec()).matmul(&self.up);
        let logits = up.matmul(&backbone.logit);
        let mut best = 1usize;
        for id in 1..backbone.vocab {
            if logits.get(0, id) > logits.get(0, best) {
                best = id;
            }
        }
        debug_assert_ne!(best as u32, SEPARATOR_ID);
        best as u32
    }

    /// Codec-space vector for a backbone id: the frozen embedding row
    /// through the down-map.
    pub fn map_to_vector(&self, id: u32, backbone: &MockBackbone) -> Vec<f64> {
        let emb = Mat::from_vec(1, backbone.d_tok, backbone.embed.row(id as usize).to_vec());
        emb.matmul(&self.down).data
    }
}

#[derive(Clone, Debug)]
pub struct AdapterTrainConfig {
    pub epochs: usize,
    pub learn_rate: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Every this many epochs the down-map is refit in closed form (ridge
    /// least squares against the current hard ids); 0 disables. This is
    /// coordinate descent on the same reconstruction loss and speeds up id
    /// separation considerably.
    pub ls_every: usize,
    pub ridge: f64,
    /// Up-map pretraining budget: convex softmax classification toward
    /// greedily assigned distinct ids. Separated ids make the down-map
    /// solve exactly, which the reconstruction loss then preserves.
    pub separation_epochs: usize,
    pub separation_lr: f64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        AdapterTrainConfig {
            epochs: 400,
            learn_rate: 1e-2,
            tau_start: 1.0,
            tau_end: 0.1,
            ls_every: 10,
            ridge: 1e-6,
            separation_epochs: 300,
            separation_lr: 5e-2,
        }
    }
}

/// Solves (A^T A + ridge I) X = A^T B by Cholesky; A: n x m, B: n x k.
fn ridge_least_squares(a: &Mat, b: &Mat, ridge: f64) -> Mat {
    let m = a.cols;
    let mut gram = a.matmul_tn(a);
    for i in 0..m {
        let v = gram.get(i, i) + ridge;
        gram.set(i, i, v);
    }
    let rhs = a.matmul_tn(b);

    // Cholesky factor L with gram = L L^T.
    let mut low = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut sum = gram.get(i, j);
            for k in 0..j {
                sum -= low.get(i, k) * low.get(j, k);
            }
            if i == j {
                low.set(i, j, sum.max(1e-12).sqrt());
            } else {
                low.set(i, j, sum / low.get(j, j));
            }
        }
    }
    // Solve L y = rhs, then L^T x = y, column by column.
    let mut x = Mat::zeros(m, b.cols);
    for col in 0..b.cols {
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut sum = rhs.get(i, col);
            for k in 0..i {
                sum -= low.get(i, k) * y[k];
            }
            y[i] = sum / low.get(i, i);
        }
        for i in (0..m).rev() {
            let mut sum = y[i];
            for k in i + 1..m {
                sum -= low.get(k, i) * x.get(k, col);
            }
            x.set(i, col, sum / low.get(i, i));
        }
    }
    x
}

/// Optimal down-map for the current hard ids.
fn refit_down(entries: &Mat, ids: &[u32], backbone: &MockBackbone, ridge: f64) -> Mat {
    let mut hard = Mat::zeros(entries.rows, backbone.d_tok);
    for (r, &id) in ids.iter().enumerate() {
        hard.row_mut(r)
            .copy_from_slice(backbone.embed.row(id as usize));
    }
    ridge_least_squares(&hard, entries, ridge)
}

/// Initializes the up-map so distinct codebook entries start near distinct
/// ids: a random draft projection ranks candidate ids per entry, a greedy
/// pass claims them without repeats, and the up-map is least-squares fit
/// toward margin-boosted logits at the claimed ids. Gradient training then
/// only has to polish.
fn assignment_init_up(
    entries: &Mat,
    backbone: &MockBackbone,
    ridge: f64,
    rng: &mut ChaCha8Rng,
) -> (Mat, Vec<usize>) {
    let d_vq = entries.cols;
    let d_tok = backbone.d_tok;
    let vocab = backbone.vocab;
    let std = (2.0 / (d_vq + d_tok) as f64).sqrt();
    let draft = Mat::randn(d_vq, d_tok, std, rng);
    let draft_logits = entries.matmul(&draft).matmul(&backbone.logit);

    let mut claimed = vec![false; vocab];
    claimed[SEPARATOR_ID as usize] = true;
    let mut targets = Vec::with_capacity(entries.rows);
    for r in 0..entries.rows {
        let row = draft_logits.row(r);
        let mut order: Vec<usize> = (0..vocab).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let id = order
            .into_iter()
            .find(|&id| !claimed[id])
            .expect("vocabulary larger than the codebook");
        claimed[id] = true;
        targets.push(id);
    }

    // Target logits: a clear margin at each claimed id.
    let margin = 4.0;
    let mut target_logits = Mat::zeros(entries.rows, vocab);
    for (r, &t) in targets.iter().enumerate() {
        target_logits.set(r, t, margin);
    }
    // Two ridge solves: entries @ M ~ targets, then up @ logit ~ M.
    let m = ridge_least_squares(entries, &target_logits, ridge.max(1e-8));
    // Solve up: minimize ||up L - M||_F -> (L L^T + ridge) up^T = L M^T.
    let up_t = {
        // Reuse the ridge solver with A = L^T (V x d_tok), B = M^T (V x d_vq):
        // (L L^T + ridge) X = L M^T is exactly A^T A X = A^T B.
        let a = transpose(&backbone.logit);
        let b = transpose(&m);
        ridge_least_squares(&a, &b, ridge.max(1e-8))
    };
    (transpose(&up_t), targets)
}

/// Convex softmax-classification pretraining of the up-map toward the
/// assigned distinct ids; stops early once every entry's argmax hits its
/// target.
fn separate_ids(
    params: &mut ParamSet,
    entries: &Mat,
    targets: &[usize],
    backbone: &MockBackbone,
    train: &AdapterTrainConfig,
) {
    if train.separation_epochs == 0 {
        return;
    }
    let k = entries.rows as f64;
    let mut adam = Adam::new(params, train.separation_lr);
    for epoch in 0..train.separation_epochs {
        let projected = entries.matmul(params.get(0));
        let logits = projected.matmul(&backbone.logit);
        let mut grad_logits = Mat::zeros(logits.rows, logits.cols);
        let mut all_hit = true;
        for r in 0..logits.rows {
            let row = logits.row(r);
            // Softmax with the separator excluded.
            let mut max = f64::NEG_INFINITY;
            for (id, &v) in row.iter().enumerate() {
                if id != SEPARATOR_ID as usize && v > max {
                    max = v;
                }
            }
            let mut total = 0.0;
            let mut exps = vec![0.0; row.len()];
            for (id, &v) in row.iter().enumerate() {
                if id != SEPARATOR_ID as usize {
                    exps[id] = (v - max).exp();
                    total += exps[id];
                }
            }
            let mut argmax = 1;
            for (id, &v) in row.iter().enumerate().skip(1) {
                if v > row[argmax] {
                    argmax = id;
                }
            }
            if argmax != targets[r] {
                all_hit = false;
            }
            for id in 0..row.len() {
                if id == SEPARATOR_ID as usize {
                    continue;
                }
                let soft = exps[id] / total;
                let y = if id == targets[r] { 1.0 } else { 0.0 };
                grad_logits.set(r, id, (soft - y) / k);
            }
        }
        if all_hit && epoch > 0 {
            break;
        }
        let grad_projected = grad_logits.matmul_nt(&backbone.logit);
        let grad_up = entries.matmul_tn(&grad_projected);
        let grads = vec![grad_up, Mat::zeros(backbone.d_tok, entries.cols)];
        adam.step(params, &grads);
    }
}

fn transpose(m: &Mat) -> Mat {
    Mat::from_fn(m.cols, m.rows, |r, c| m.get(c, r))
}

#[derive(Clone, Debug)]
pub struct AdapterReport {
    /// Fraction of codebook entries sharing their mapped id with another.
    pub collision_rate: f64,
    /// Mean hard-path reconstruction loss per codebook entry at
    /// initialization.
    pub initial_loss: f64,
    /// Same measure after training.
    pub final_loss: f64,
    /// Final code-to-id mapping.
    pub mapping: Vec<u32>,
}

fn hard_ids(entries: &Mat, up: &Mat, backbone: &MockBackbone) -> Vec<u32> {
    let logits = entries.matmul(up).matmul(&backbone.logit);
    (0..entries.rows)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 1usize;
            for (id, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = id;
                }
            }
            best as u32
        })
        .collect()
}

/// Mean reconstruction loss per entry along the hard argmax path.
fn hard_loss(entries: &Mat, up: &Mat, down: &Mat, backbone: &MockBackbone) -> f64 {
    let ids = hard_ids(entries, up, backbone);
    let mut total = 0.0;
    for (r, &id) in ids.iter().enumerate() {
        let emb = Mat::from_vec(1, backbone.d_tok, backbone.embed.row(id as usize).to_vec());
        let recon = emb.matmul(down);
        for (a, b) in recon.data.iter().zip(entries.row(r)) {
            total += (a - b) * (a - b);
        }
    }
    total / entries.rows as f64
}

fn collision_rate(ids: &[u32]) -> f64 {
    let distinct: std::collections::HashSet<u32> = ids.iter().copied().collect();
    (ids.len() - distinct.len()) as f64 / ids.len() as f64
}

/// Trains the adapter pair against a frozen codec and backbone.
pub fn train_adapters(
    codec: &VqCodec,
    backbone: &MockBackbone,
    train: &AdapterTrainConfig,
    seed: u64,
) -> Result<(AdapterPair, AdapterReport), VqError> {
    let d_vq = codec.config.d_model;
    let rank = backbone.logit_rank(1e-9);
    if rank < d_vq {
        return Err(VqError::DegenerateBackbone {
            rank,
            needed: d_vq,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = codec.codebook.entries.clone();
    let mut params = ParamSet::new();
    let up_std = (2.0 / (d_vq + backbone.d_tok) as f64).sqrt();
    let (up_init, targets) = assignment_init_up(&entries, backbone, train.ridge, &mut rng);
    params.add("up", up_init);
    params.add("down", Mat::randn(backbone.d_tok, d_vq, up_std, &mut rng));

    let initial_loss = hard_loss(&entries, params.get(0), params.get(1), backbone);
    separate_ids(&mut params, &entries, &targets, backbone, train);
    if train.ls_every > 0 {
        let ids = hard_ids(&entries, params.get(0), backbone);
        *params.get_mut(1) = refit_down(&entries, &ids, backbone, train.ridge);
    }

    // Mask that removes the reserved separator id from the softmax.
    let mut sep_mask = Mat::zeros(entries.rows, backbone.vocab);
    for r in 0..entries.rows {
        sep_mask.set(r, SEPARATOR_ID as usize, -1e9);
    }

    let mut adam = Adam::new(&params, train.learn_rate);
    // Track the best hard-path loss; straight-through polishing must never
    // hand back something worse than the state it started from.
    let mut best_loss = hard_loss(&entries, params.get(0), params.get(1), backbone);
    let mut best_up = params.get(0).clone();
    let mut best_down = params.get(1).clone();
    let converged = |loss: f64| loss < 1e-8;
    for epoch in 0..train.epochs {
        if converged(best_loss) {
            break;
        }
        let progress = if train.epochs > 1 {
            epoch as f64 / (train.epochs - 1) as f64
        } else {
            0.0
        };
        let tau = train.tau_start * (train.tau_end / train.tau_start).powf(progress);

        let mut g = Graph::new(&params);
        let p = g.constant(entries.clone());
        let up = g.param_named("up");
        let projected = g.matmul(p, up);
        let logit_map = g.constant(backbone.logit.clone());
        let logits = g.matmul(projected, logit_map);
        let masked = g.add_const(logits, &sep_mask);

        // Hard ids from the current forward values.
        let ids: Vec<u32> = {
            let values = g.value(masked);
            (0..values.rows)
                .map(|r| {
                    let row = values.row(r);
                    let mut best = 1usize;
                    for (id, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = id;
                        }
                    }
                    best as u32
                })
                .collect()
        };

        let tempered = g.scale(masked, 1.0 / tau);
        let soft = g.softmax_rows(tempered);
        let embed_map = g.constant(backbone.embed.clone());
        let soft_emb = g.matmul(soft, embed_map);
        // Straight-through to the hard embeddings.
        let mut hard = Mat::zeros(entries.rows, backbone.d_tok);
        for (r, &id) in ids.iter().enumerate() {
            hard.row_mut(r)
                .copy_from_slice(backbone.embed.row(id as usize));
        }
        let mut delta = hard;
        for (d, &s) in delta.data.iter_mut().zip(&g.value(soft_emb).data) {
            *d -= s;
        }
        let st = g.add_const(soft_emb, &delta);
        let down = g.param_named("down");
        let recon = g.matmul(st, down);
        let mut neg_entries = entries.clone();
        neg_entries.scale_assign(-1.0);
        let diff = g.add_const(recon, &neg_entries);
        let sq = g.mul(diff, diff);
        let loss = g.sum_all(sq);

        let grads = g.backward(loss);
        adam.step(&mut params, &grads);

        if train.ls_every > 0 && (epoch + 1) % train.ls_every == 0 {
            let refit = refit_down(&entries, &ids, backbone, train.ridge);
            *params.get_mut(1) = refit;
            let loss = hard_loss(&entries, params.get(0), params.get(1), backbone);
            if loss < best_loss {
                best_loss = loss;
                best_up = params.get(0).clone();
                best_down = params.get(1).clone();
            }
        }
    }

    // Final closed-form polish of the down-map for the settled ids.
    if train.ls_every > 0 {
        let ids = hard_ids(&entries, params.get(0), backbone);
        let refit = refit_down(&entries, &ids, backbone, train.ridge);
        *params.get_mut(1) = refit;
    }
    let loss = hard_loss(&entries, params.get(0), params.get(1), backbone);
    if loss < best_loss {
        best_up = params.get(0).clone();
        best_down = params.get(1).clone();
    }

    let adapters = AdapterPair {
        up: best_up,
        down: best_down,
    };
    let mapping = hard_ids(&entries, &adapters.up, backbone);
    let final_loss = hard_loss(&entries, &adapters.up, &adapters.down, backbone);
    let report = AdapterReport {
        collision_rate: collision_rate(&mapping),
        initial_loss,
        final_loss,
        mapping,
    };
    Ok((adapters, report))
}
