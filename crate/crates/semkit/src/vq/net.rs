//! The codec's sequence networks: a transformer encoder over pair tokens
//! and an autoregressive transformer decoder that cross-attends the
//! quantized primitive vectors. Pre-norm residual blocks, learned token
//! embeddings, sinusoidal positions.

use super::graph::{Graph, NodeId, ParamSet};
use super::mat::Mat;
use super::CodecConfig;
use crate::sem::{Token, VOCAB_SIZE};
use rand_chacha::ChaCha8Rng;

/// Embedding row used as the decoder's begin-of-sequence input.
pub const BOS_ROW: usize = VOCAB_SIZE;

/// Positional amplitude relative to the token embeddings; positions must
/// not drown token identity.
const POSITION_SCALE: f64 = 0.1;
/// Slot encodings ride on top of quantized vectors of roughly unit scale.
const SLOT_SCALE: f64 = 0.3;

pub fn sinusoidal_positions(len: usize, dim: usize, scale: f64) -> Mat {
    Mat::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let rate = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let angle = pos as f64 * rate;
        scale
            * if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
    })
}

fn add_attention_params(params: &mut ParamSet, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / (2 * d) as f64).sqrt();
    for name in ["wq", "wk", "wv", "wo"] {
        params.add(&format!("{prefix}.{name}"), Mat::randn(d, d, std, rng));
    }
    for name in ["bq", "bk", "bv", "bo"] {
        params.add(&format!("{prefix}.{name}"), Mat::zeros(1, d));
    }
}

fn add_norm_params(params: &mut ParamSet, prefix: &str, d: usize) {
    params.add(&format!("{prefix}.gain"), Mat::from_vec(1, d, vec![1.0; d]));
    params.add(&format!("{prefix}.bias"), Mat::zeros(1, d));
}

fn add_ffn_params(params: &mut ParamSet, prefix: &str, d: usize, ffn: usize, rng: &mut ChaCha8Rng) {
    let std1 = (2.0 / (d + ffn) as f64).sqrt();
    params.add(&format!("{prefix}.w1"), Mat::randn(d, ffn, std1, rng));
    params.add(&format!("{prefix}.b1"), Mat::zeros(1, ffn));
    params.add(&format!("{prefix}.w2"), Mat::randn(ffn, d, std1, rng));
    params.add(&format!("{prefix}.b2"), Mat::zeros(1, d));
}

/// All trainable weights for a config, deterministically initialized.
pub fn init_params(config: &CodecConfig, rng: &mut ChaCha8Rng) -> ParamSet {
    let d = config.d_model;
    let mut params = ParamSet::new();
    params.add("embed", Mat::randn(VOCAB_SIZE + 1, d, 1.0 / (d as f64).sqrt(), rng));
    for layer in 0..config.encoder_layers {
        let p = format!("enc{layer}");
        add_norm_params(&mut params, &format!("{p}.ln1"), d);
        add_attention_params(&mut params, &format!("{p}.attn"), d, rng);
        add_norm_params(&mut params, &format!("{p}.ln2"), d);
        add_ffn_params(&mut params, &format!("{p}.ffn"), d, config.ffn_dim, rng);
    }
    add_norm_params(&mut params, "enc.out", d);
    for layer in 0..config.decoder_layers {
        let p = format!("dec{layer}");
        add_norm_params(&mut params, &format!("{p}.ln1"), d);
        add_attention_params(&mut params, &format!("{p}.attn"), d, rng);
        add_norm_params(&mut params, &format!("{p}.lnc"), d);
        add_attention_params(&mut params, &format!("{p}.cross"), d, rng);
        add_norm_params(&mut params, &format!("{p}.ln2"), d);
        add_ffn_params(&mut params, &format!("{p}.ffn"), d, config.ffn_dim, rng);
    }
    add_norm_params(&mut params, "dec.out", d);
    params.add(
        "out.w",
        Mat::randn(d, VOCAB_SIZE, (2.0 / (d + VOCAB_SIZE) as f64).sqrt(), rng),
    );
    params.add("out.b", Mat::zeros(1, VOCAB_SIZE));
    params
}

fn causal_mask(len: usize) -> Mat {
    Mat::from_fn(len, len, |q, k| if k > q { -1e9 } else { 0.0 })
}

/// Multi-head attention block. `kv` supplies keys and values (`x` itself
/// for self-attention); `causal` masks future positions.
fn attention(
    g: &mut Graph,
    config: &CodecConfig,
    prefix: &str,
    x: NodeId,
    kv: NodeId,
    causal: bool,
) -> NodeId {
    let d = config.d_model;
    let heads = config.heads;
    let dh = d / heads;
    let wq = g.param_named(&format!("{prefix}.wq"));
    let bq = g.param_named(&format!("{prefix}.bq"));
    let wk = g.param_named(&format!("{prefix}.wk"));
    let bk = g.param_named(&format!("{prefix}.bk"));
    let wv = g.param_named(&format!("{prefix}.wv"));
    let bv = g.param_named(&format!("{prefix}.bv"));
    let wo = g.param_named(&format!("{prefix}.wo"));
    let bo = g.param_named(&format!("{prefix}.bo"));

    let q = g.matmul(x, wq);
    let q = g.add_row_broadcast(q, bq);
    let k = g.matmul(kv, wk);
    let k = g.add_row_broadcast(k, bk);
    let v = g.matmul(kv, wv);
    let v = g.add_row_broadcast(v, bv);

    let mask = causal.then(|| causal_mask(g.value(x).rows));
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_nt(qh, kh);
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = match &mask {
            Some(m) => g.add_const(scaled, m),
            None => scaled,
        };
        let weights = g.softmax_rows(masked);
        head_outputs.push(g.matmul(weights, vh));
    }
    let concat = g.concat_cols(&head_outputs);
    let out = g.matmul(concat, wo);
    g.add_row_broadcast(out, bo)
}

fn ffn(g: &mut Graph, prefix: &str, x: NodeId) -> NodeId {
    let w1 = g.param_named(&format!("{prefix}.w1"));
    let b1 = g.param_named(&format!("{prefix}.b1"));
    let w2 = g.param_named(&format!("{prefix}.w2"));
    let b2 = g.param_named(&format!("{prefix}.b2"));
    let h = g.matmul(x, w1);
    let h = g.add_row_broadcast(h, b1);
    let h = g.relu(h);
    let h = g.matmul(h, w2);
    g.add_row_broadcast(h, b2)
}

fn norm(g: &mut Graph, prefix: &str, x: NodeId) -> NodeId {
    let gain = g.param_named(&format!("{prefix}.gain"));
    let bias = g.param_named(&format!("{prefix}.bias"));
    g.layer_norm_rows(x, gain, bias)
}

/// Encoder: per-token hidden states for one pair.
pub fn encode_hidden(g: &mut Graph, config: &CodecConfig, tokens: &[Token]) -> NodeId {
    let ids: Vec<usize> = tokens.iter().map(|t| t.index() as usize).collect();
    let embed = g
        .params()
        .index_of("embed")
        .expect("embedding table present");
    let mut x = g.gather(embed, &ids);
    if config.use_positions {
        let pe = sinusoidal_positions(ids.len(), config.d_model, POSITION_SCALE);
        x = g.add_const(x, &pe);
    }
    for layer in 0..config.encoder_layers {
        let p = format!("enc{layer}");
        let normed = norm(g, &format!("{p}.ln1"), x);
        let attended = attention(g, config, &format!("{p}.attn"), normed, normed, false);
        x = g.add(x, attended);
        let normed = norm(g, &format!("{p}.ln2"), x);
        let fed = ffn(g, &format!("{p}.ffn"), normed);
        x = g.add(x, fed);
    }
    norm(g, "enc.out", x)
}

/// Decoder logits over the vocabulary for every position of the
/// teacher-forced input (BOS followed by the pair tokens minus the last).
/// `primitives` are the quantized per-primitive vectors; slot positions are
/// added here so the decoder can tell them apart.
pub fn decoder_logits(
    g: &mut Graph,
    config: &CodecConfig,
    target: &[Token],
    primitives: NodeId,
) -> NodeId {
    let mut ids: Vec<usize> = Vec::with_capacity(target.len());
    ids.push(BOS_ROW);
    ids.extend(target[..target.len() - 1].iter().map(|t| t.index() as usize));
    decoder_logits_for_prefix(g, config, &ids, primitives)
}

/// Same as [`decoder_logits`] but over an arbitrary input id row (already
/// shifted, BOS first); used for step-by-step unrolling.
pub fn decoder_logits_for_prefix(
    g: &mut Graph,
    config: &CodecConfig,
    input_ids: &[usize],
    primitives: NodeId,
) -> NodeId {
    let embed = g
        .params()
        .index_of("embed")
        .expect("embedding table present");
    let mut x = g.gather(embed, input_ids);
    let pe = sinusoidal_positions(input_ids.len(), config.d_model, POSITION_SCALE);
    x = g.add_const(x, &pe);

    let slot_pe = sinusoidal_positions(g.value(primitives).rows, config.d_model, SLOT_SCALE);
    let prims = g.add_const(primitives, &slot_pe);

    for layer in 0..config.decoder_layers {
        let p = format!("dec{layer}");
        let normed = norm(g, &format!("{p}.ln1"), x);
        let attended = attention(g, config, &format!("{p}.attn"), normed, normed, true);
        x = g.add(x, attended);
        let normed = norm(g, &format!("{p}.lnc"), x);
        let crossed = attention(g, config, &format!("{p}.cross"), normed, prims, false);
        x = g.add(x, crossed);
        let normed = norm(g, &format!("{p}.ln2"), x);
        let fed = ffn(g, &format!("{p}.ffn"), normed);
        x = g.add(x, fed);
    }
    let x = norm(g, "dec.out", x);
    let w = g.param_named("out.w");
    let b = g.param_named("out.b");
    let logits = g.matmul(x, w);
    g.add_row_broadcast(logits, b)
}
