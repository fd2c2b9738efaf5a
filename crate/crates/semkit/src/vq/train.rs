//! Codec training: per-pair loss graphs (squared-EMD reconstruction plus
//! commitment), EMA codebook updates, Adam, early stopping, and the
//! finite-difference gradient check.

use super::codebook::Codebook;
use super::codec::{split_pairs, PairItem, VqCodec};
use super::graph::{Graph, ParamSet};
use super::mat::Mat;
use super::net;
use super::{CodecConfig, VqError};
use crate::sem::{Token, VOCAB_SIZE};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// How the pooled vectors reach the decoder.
pub enum Quantization<'a> {
    /// Nearest-codebook with straight-through gradients and the commitment
    /// term.
    Codebook(&'a Codebook),
    /// Frozen assignments: straight-through and commitment against the
    /// given codes' entries regardless of current nearest neighbors. Used
    /// after the codebook freeze so the decoder's conditioning is stable.
    Fixed {
        book: &'a Codebook,
        codes: &'a [usize],
    },
    /// Identity: the decoder consumes the pooled vectors directly. Used by
    /// the gradient check.
    Bypass,
}

pub struct PairForward {
    pub loss: f64,
    pub grads: Option<Vec<Mat>>,
    pub assignments: Vec<(usize, Vec<f64>)>,
}

/// Builds the full loss graph for one pair and (optionally) backpropagates.
pub fn pair_loss(
    params: &ParamSet,
    config: &CodecConfig,
    item: &PairItem,
    quant: &Quantization,
    want_grads: bool,
) -> PairForward {
    let mut g = Graph::new(params);
    let hidden = net::encode_hidden(&mut g, config, &item.tokens);
    let pooled = g.masked_max_rows(hidden, &item.mask_rows);

    let mut assignments = Vec::new();
    let commitment = |g: &mut Graph, quantized: &Mat| {
        // beta * ||pooled - sg(quantized)||^2.
        let mut neg_quantized = quantized.clone();
        neg_quantized.scale_assign(-1.0);
        let diff = g.add_const(pooled, &neg_quantized);
        let sq = g.mul(diff, diff);
        let sum = g.sum_all(sq);
        g.scale(sum, config.commitment_weight)
    };
    let (prims, commit) = match quant {
        Quantization::Bypass => (pooled, None),
        Quantization::Codebook(book) => {
            let pooled_mat = g.value(pooled).clone();
            let mut quantized = Mat::zeros(pooled_mat.rows, pooled_mat.cols);
            for r in 0..pooled_mat.rows {
                let vector = pooled_mat.row(r).to_vec();
                let code = book.quantize(&vector);
                quantized.row_mut(r).copy_from_slice(book.entry(code));
                assignments.push((code, vector));
            }
            // Straight-through: decoder input takes the quantized values,
            // the gradient flows into the pooled path unchanged.
            let mut delta = quantized.clone();
            for (d, &p) in delta.data.iter_mut().zip(&pooled_mat.data) {
                *d -= p;
            }
            let st = g.add_const(pooled, &delta);
            let commit = commitment(&mut g, &quantized);
            (st, Some(commit))
        }
        Quantization::Fixed { book, codes } => {
            // Frozen conditioning: the decoder sees the entries as pure
            // constants, and the encoder trains only through commitment,
            // which pulls each pooled vector onto its frozen entry so the
            // nearest-code lookup at inference reproduces these codes.
            let rows = g.value(pooled).rows;
            assert_eq!(rows, codes.len(), "frozen codes must match primitives");
            let mut quantized = Mat::zeros(rows, g.value(pooled).cols);
            for (r, &code) in codes.iter().enumerate() {
                quantized.row_mut(r).copy_from_slice(book.entry(code));
            }
            let commit = commitment(&mut g, &quantized);
            let prims = g.constant(quantized);
            (prims, Some(commit))
        }
    };

    let logits = net::decoder_logits(&mut g, config, &item.tokens, prims);
    let probs = g.softmax_rows(logits);
    let mut neg_onehot = Mat::zeros(item.tokens.len(), VOCAB_SIZE);
    for (r, t) in item.tokens.iter().enumerate() {
        neg_onehot.set(r, t.index() as usize, -1.0);
    }
    let gaps = g.add_const(probs, &neg_onehot);
    let cdf_gaps = g.cumsum_rows(gaps);
    let sq = g.mul(cdf_gaps, cdf_gaps);
    let emd = g.sum_all(sq);
    let mut total = match commit {
        Some(c) => g.add(emd, c),
        None => emd,
    };
    if config.ce_weight > 0.0 {
        let targets: Vec<usize> = item.tokens.iter().map(|t| t.index() as usize).collect();
        let ce = g.cross_entropy_rows(logits, &targets);
        let scaled = g.scale(ce, config.ce_weight);
        total = g.add(total, scaled);
    }

    PairForward {
        loss: g.scalar(total),
        grads: want_grads.then(|| g.backward(total)),
        assignments,
    }
}

/// Teacher-forced exact match: true iff the argmax at every position equals
/// the target token, which is equivalent to the greedy unroll reproducing
/// the pair exactly.
fn teacher_forced_exact(codec: &VqCodec, item: &PairItem, codes: &[usize]) -> bool {
    let mut g = Graph::new(&codec.params);
    let mut prims = Mat::zeros(codes.len(), codec.config.d_model);
    for (r, &code) in codes.iter().enumerate() {
        prims.row_mut(r).copy_from_slice(codec.codebook.entry(code));
    }
    let prims = g.constant(prims);
    let logits = net::decoder_logits(&mut g, &codec.config, &item.tokens, prims);
    let values = g.value(logits);
    for (r, target) in item.tokens.iter().enumerate() {
        let row = values.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best != target.index() as usize {
            return false;
        }
    }
    true
}

/// Greedy token-exact reconstruction rate over items.
pub fn exact_reconstruction_rate(codec: &VqCodec, items: &[PairItem]) -> f64 {
    let exact: usize = items
        .par_iter()
        .map(|item| {
            let (_, codes, _) = codec.encode_item(item);
            usize::from(teacher_forced_exact(codec, item, &codes))
        })
        .sum();
    exact as f64 / items.len() as f64
}

/// Adam optimizer over a [`ParamSet`].
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Mat]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in 0..grads.len() {
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = params.get_mut(id);
            for ((pv, g), (mv, vv)) in p
                .data
                .iter_mut()
                .zip(&grads[id].data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub codebook_utilization: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub curves: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub warnings: Vec<String>,
    /// Greedy token-exact reconstruction rate on the training set at the
    /// end of training.
    pub final_exact_rate: f64,
    /// Per-item conditioning tuples cached at the codebook freeze, when a
    /// freeze point was configured.
    pub frozen_codes: Option<Vec<Vec<usize>>>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,codebook_utilization\n");
        for s in &self.curves {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.epoch, s.train_loss, s.val_loss, s.codebook_utilization
            ));
        }
        out
    }
}

/// Usage entropy below this many nats raises the collapse warning.
const COLLAPSE_ENTROPY_NATS: f64 = 1.0;

/// Codes that win no assignment for this many consecutive epochs are
/// re-seeded from observed pooled vectors.
const RESTART_PATIENCE: usize = 5;

/// Pooled vectors of every primitive under the given parameters.
fn pooled_vectors(params: &ParamSet, config: &CodecConfig, items: &[PairItem]) -> Vec<Vec<f64>> {
    items
        .par_iter()
        .flat_map(|item| {
            let mut g = Graph::new(params);
            let hidden = net::encode_hidden(&mut g, config, &item.tokens);
            let pooled = g.masked_max_rows(hidden, &item.mask_rows);
            let m = g.value(pooled);
            (0..m.rows).map(|r| m.row(r).to_vec()).collect::<Vec<_>>()
        })
        .collect()
}

/// Trains the codec on full model sequences (split into pairs internally).
pub fn train_vqvae(
    corpus: &[Vec<Token>],
    config: &CodecConfig,
    seed: u64,
) -> Result<(VqCodec, TrainReport), VqError> {
    assert!(!corpus.is_empty(), "training needs a corpus");
    let mut items: Vec<PairItem> = Vec::new();
    for seq in corpus {
        for pair in split_pairs(seq)? {
            items.push(PairItem::prepare(&pair, config)?);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net::init_params(config, &mut rng);
    // Seed the codebook from the fresh encoder's pooled vectors so early
    // assignments spread across the book instead of collapsing.
    let seed_vectors = pooled_vectors(&params, config, &items);
    let mut codebook = Codebook::init_from_data(
        &seed_vectors,
        config.codebook_size,
        config.d_model,
        config.ema_decay,
        &mut rng,
    );
    let mut unused_epochs = vec![0usize; config.codebook_size];

    // Held-out split for early stopping; empty fraction validates on train.
    let mut order: Vec<usize> = (0..items.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((items.len() as f64) * config.val_fraction).round() as usize;
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) = {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    let val_idx = if val_idx.is_empty() {
        train_idx.clone()
    } else {
        val_idx
    };

    let mut adam = Adam::new(&params, config.learn_rate);
    let mut report = TrainReport::default();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_codebook = codebook.clone();
    let mut stale = 0usize;

    let mut train_order = train_idx.clone();
    let mut frozen_codes: Option<Vec<Vec<usize>>> = None;
    for epoch in 0..config.epochs {
        let codebook_live = config
            .freeze_codebook_after
            .map_or(true, |freeze| epoch < freeze);
        if !codebook_live && frozen_codes.is_none() {
            // Cache every item's assignment once; from here on both the
            // entries and the conditioning tuples stay put.
            let codes: Vec<Vec<usize>> = items
                .par_iter()
                .map(|item| {
                    let mut g = Graph::new(&params);
                    let hidden = net::encode_hidden(&mut g, config, &item.tokens);
                    let pooled = g.masked_max_rows(hidden, &item.mask_rows);
                    let m = g.value(pooled);
                    (0..m.rows)
                        .map(|r| codebook.quantize(m.row(r)))
                        .collect()
                })
                .collect();
            frozen_codes = Some(codes);
        }
        if let Some(final_lr) = config.learn_rate_final {
            let progress = if config.epochs > 1 {
                epoch as f64 / (config.epochs - 1) as f64
            } else {
                0.0
            };
            adam.set_lr(config.learn_rate * (final_lr / config.learn_rate).powf(progress));
        }
        for i in (1..train_order.len()).rev() {
            let j = rng.random_range(0..=i);
            train_order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_assignments: Vec<(usize, Vec<f64>)> = Vec::new();
        for batch in train_order.chunks(config.batch_size) {
            let results: Vec<PairForward> = batch
                .par_iter()
                .map(|&i| {
                    let quant = match &frozen_codes {
                        Some(codes) => Quantization::Fixed {
                            book: &codebook,
                            codes: &codes[i],
                        },
                        None => Quantization::Codebook(&codebook),
                    };
                    pair_loss(&params, config, &items[i], &quant, true)
                })
                .collect();
            let mut grads = params.zero_grads();
            let mut assignments = Vec::new();
            for result in results {
                epoch_loss += result.loss;
                for (g, delta) in grads.iter_mut().zip(result.grads.expect("grads requested")) {
                    g.add_assign(&delta);
                }
                assignments.extend(result.assignments);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.scale_assign(scale);
            }
            adam.step(&mut params, &grads);
            if codebook_live {
                codebook.ema_update(&assignments);
            }
            epoch_assignments.extend(assignments);
        }
        let train_loss = epoch_loss / train_order.len() as f64;

        // Revive codes that stopped winning assignments, seeding them from
        // the worst-quantized vectors (plus noise, so no exact-copy entry
        // can steal an existing assignment by tie-break).
        if codebook_live {
            let mut used = vec![false; config.codebook_size];
            for (code, _) in &epoch_assignments {
                used[*code] = true;
            }
            let mut by_error: Vec<(f64, usize)> = epoch_assignments
                .iter()
                .enumerate()
                .map(|(i, (code, vector))| {
                    let err: f64 = vector
                        .iter()
                        .zip(codebook.entry(*code))
                        .map(|(v, e)| (v - e) * (v - e))
                        .sum();
                    (err, i)
                })
                .collect();
            by_error.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut next_source = 0usize;
            let noise_std = 0.01 / (config.d_model as f64).sqrt();
            for code in 0..config.codebook_size {
                if used[code] {
                    unused_epochs[code] = 0;
                } else {
                    unused_epochs[code] += 1;
                    if unused_epochs[code] >= RESTART_PATIENCE && next_source < by_error.len() {
                        let (_, idx) = by_error[next_source];
                        next_source += 1;
                        let noise = Mat::randn(1, config.d_model, noise_std, &mut rng);
                        let vector: Vec<f64> = epoch_assignments[idx]
                            .1
                            .iter()
                            .zip(&noise.data)
                            .map(|(v, n)| v + n)
                            .collect();
                        codebook.restart_entry(code, &vector);
                        unused_epochs[code] = 0;
                    }
                }
            }
        }

        let val_loss: f64 = val_idx
            .par_iter()
            .map(|&i| {
                let quant = match &frozen_codes {
                    Some(codes) => Quantization::Fixed {
                        book: &codebook,
                        codes: &codes[i],
                    },
                    None => Quantization::Codebook(&codebook),
                };
                pair_loss(&params, config, &items[i], &quant, false).loss
            })
            .sum::<f64>()
            / val_idx.len() as f64;

        report.curves.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            codebook_utilization: codebook.utilization(),
        });
        report.stopped_epoch = epoch;

        if val_loss < best_val - 1e-12 {
            best_val = val_loss;
            best_params = params.clone();
            best_codebook = codebook.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }

        if let Some(target) = config.exact_stop {
            if (epoch + 1) % config.eval_every == 0 {
                let probe = VqCodec {
                    config: config.clone(),
                    params: params.clone(),
                    codebook: codebook.clone(),
                    adapters: None,
                    backbone: None,
                };
                let train_items: Vec<PairItem> =
                    train_idx.iter().map(|&i| items[i].clone()).collect();
                let rate = exact_reconstruction_rate(&probe, &train_items);
                if rate >= target {
                    best_params = params.clone();
                    best_codebook = codebook.clone();
                    break;
                }
            }
        }
    }

    // For memorization runs (val == train) the latest weights dominate;
    // otherwise restore the best validation snapshot.
    let (final_params, final_codebook) = if config.exact_stop.is_some() {
        (params, codebook)
    } else {
        (best_params, best_codebook)
    };
    let codec = VqCodec {
        config: config.clone(),
        params: final_params,
        codebook: final_codebook,
        adapters: None,
        backbone: None,
    };
    if codec.codebook.usage_entropy() < COLLAPSE_ENTROPY_NATS {
        report.warnings.push(format!(
            "codebook collapse: usage entropy {:.3} nats",
            codec.codebook.usage_entropy()
        ));
    }
    let train_items: Vec<PairItem> = train_idx.iter().map(|&i| items[i].clone()).collect();
    report.final_exact_rate = exact_reconstruction_rate(&codec, &train_items);
    report.frozen_codes = frozen_codes;
    Ok((codec, report))
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Central finite differences over a deterministic sample of encoder-side
/// parameters with quantization bypassed.
pub fn gradient_check(
    config: &CodecConfig,
    pair_tokens: &[Token],
    seed: u64,
    coords_per_param: usize,
) -> Result<GradCheckReport, VqError> {
    let item = PairItem::prepare(pair_tokens, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net::init_params(config, &mut rng);

    let analytic = pair_loss(&params, config, &item, &Quantization::Bypass, true)
        .grads
        .expect("grads requested");
    let encoder_params: Vec<usize> = params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, name)| name.starts_with("enc") || *name == "embed")
        .map(|(id, _)| id)
        .collect();

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for pid in encoder_params {
        let (rows, cols) = {
            let m = params.get(pid);
            (m.rows, m.cols)
        };
        for _ in 0..coords_per_param {
            let r = rng.random_range(0..rows);
            let c = rng.random_range(0..cols);
            let orig = params.get(pid).get(r, c);
            params.get_mut(pid).set(r, c, orig + h);
            let up = pair_loss(&params, config, &item, &Quantization::Bypass, false).loss;
            params.get_mut(pid).set(r, c, orig - h);
            let down = pair_loss(&params, config, &item, &Quantization::Bypass, false).loss;
            params.get_mut(pid).set(r, c, orig);
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic[pid].get(r, c);
            // Central differences on a loss of this magnitude carry ~1e-9
            // of cancellation noise; coordinates with a true zero gradient
            // (unused embedding rows, dead relu units) sit below it.
            if numeric.abs() < 1e-6 && exact.abs() < 1e-6 {
                continue;
            }
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs());
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        checked,
        max_rel_error: max_rel,
    })
}
