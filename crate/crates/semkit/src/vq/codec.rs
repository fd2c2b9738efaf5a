//! The assembled codec: pair encoding to codes, code decoding to token
//! distributions, reconstruction unrolls, and the full model-to-backbone-id
//! round trip through the adapters.

use super::adapter::AdapterPair;
use super::backbone::MockBackbone;
use super::codebook::Codebook;
use super::graph::{Graph, ParamSet};
use super::mat::Mat;
use super::net;
use super::{CodecConfig, VqError};
use crate::fsa::{Automaton, FsaState};
use crate::sem::{parse_model, serialize_model, CadModel, Token};
use crate::tokenize::{pooling_masks, segment_primitives, PoolingMask};

/// Reserved backbone id marking the end of each pair's code group.
pub const SEPARATOR_ID: u32 = 0;

/// One pair prepared for the codec: its tokens plus the active pooling
/// rows.
#[derive(Clone, Debug)]
pub struct PairItem {
    pub tokens: Vec<Token>,
    pub mask_rows: Vec<Vec<bool>>,
}

impl PairItem {
    pub fn prepare(pair_tokens: &[Token], config: &CodecConfig) -> Result<PairItem, VqError> {
        if pair_tokens.len() > config.max_pair_len {
            return Err(VqError::SequenceTooLong {
                len: pair_tokens.len(),
                max: config.max_pair_len,
            });
        }
        let spans = segment_primitives(pair_tokens, config.variant)?;
        let mask: PoolingMask = pooling_masks(&spans, pair_tokens.len())?;
        let mask_rows = mask.rows[..mask.active].to_vec();
        Ok(PairItem {
            tokens: pair_tokens.to_vec(),
            mask_rows,
        })
    }
}

/// Splits a full model sequence into its pairs' token streams.
pub fn split_pairs(tokens: &[Token]) -> Result<Vec<Vec<Token>>, VqError> {
    let model = parse_model(tokens)?;
    let mut pairs = Vec::with_capacity(model.pairs.len());
    let mut offset = 0;
    for _ in 0..model.pairs.len() {
        let len = tokens[offset..]
            .iter()
            .position(|&t| t == Token::EXTRUSION_END)
            .expect("parsed model has extrusion ends")
            + 1;
        pairs.push(tokens[offset..offset + len].to_vec());
        offset += len;
    }
    Ok(pairs)
}

/// Trained codec state. The adapters and backbone are attached after
/// alignment training.
#[derive(Clone, Debug, PartialEq)]
pub struct VqCodec {
    pub config: CodecConfig,
    pub params: ParamSet,
    pub codebook: Codebook,
    pub adapters: Option<AdapterPair>,
    pub backbone: Option<MockBackbone>,
}

impl VqCodec {
    /// Encoder pass: pooled per-primitive vectors, their nearest codebook
    /// codes, and the quantized vectors.
    #[allow(clippy::type_complexity)]
    pub fn encode_pair(
        &self,
        pair_tokens: &[Token],
    ) -> Result<(Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>), VqError> {
        let item = PairItem::prepare(pair_tokens, &self.config)?;
        let (pooled, codes, quantized) = self.encode_item(&item);
        Ok((pooled, codes, quantized))
    }

    pub(crate) fn encode_item(&self, item: &PairItem) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
        let mut g = Graph::new(&self.params);
        let hidden = net::encode_hidden(&mut g, &self.config, &item.tokens);
        let pooled_node = g.masked_max_rows(hidden, &item.mask_rows);
        let pooled_mat = g.value(pooled_node);
        let mut pooled = Vec::with_capacity(pooled_mat.rows);
        let mut codes = Vec::with_capacity(pooled_mat.rows);
        let mut quantized = Vec::with_capacity(pooled_mat.rows);
        for r in 0..pooled_mat.rows {
            let vector = pooled_mat.row(r).to_vec();
            let code = self.codebook.quantize(&vector);
            quantized.push(self.codebook.entry(code).to_vec());
            codes.push(code);
            pooled.push(vector);
        }
        (pooled, codes, quantized)
    }

    fn primitive_matrix(&self, codes: &[usize]) -> Mat {
        let mut m = Mat::zeros(codes.len(), self.config.d_model);
        for (r, &code) in codes.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.codebook.entry(code));
        }
        m
    }

    /// Next-token distribution given quantized codes and a decoded prefix.
    pub fn decode_codes(&self, codes: &[usize], prefix: &[Token]) -> Result<Vec<f64>, VqError> {
        if prefix.len() + 1 > self.config.max_pair_len {
            return Err(VqError::SequenceTooLong {
                len: prefix.len() + 1,
                max: self.config.max_pair_len,
            });
        }
        assert!(codes.len() <= self.config.max_primitives);
        let mut input_ids = Vec::with_capacity(prefix.len() + 1);
        input_ids.push(net::BOS_ROW);
        input_ids.extend(prefix.iter().map(|t| t.index() as usize));

        let mut g = Graph::new(&self.params);
        let prims = g.constant(self.primitive_matrix(codes));
        let logits = net::decoder_logits_for_prefix(&mut g, &self.config, &input_ids, prims);
        let probs = g.softmax_rows(logits);
        let last = g.value(probs).row(input_ids.len() - 1).to_vec();
        Ok(last)
    }

    /// Greedy unroll from codes until the pair closes at its extrusion end
    /// or `max_len` is hit.
    pub fn greedy_reconstruct(&self, codes: &[usize], max_len: usize) -> Vec<Token> {
        let mut tokens: Vec<Token> = Vec::new();
        while tokens.len() < max_len.min(self.config.max_pair_len - 1) {
            let dist = self
                .decode_codes(codes, &tokens)
                .expect("prefix stays within the cap");
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            let token = Token::new(best as u8).expect("vocab index");
            tokens.push(token);
            if token == Token::EXTRUSION_END {
                break;
            }
        }
        tokens
    }

    /// Automaton-constrained unroll: at each step the distribution is
    /// restricted to the active mask, so the reconstruction always parses.
    /// Near the length cap, structure-opening options whose minimal closure
    /// would no longer fit are dropped from the mask, so the unroll always
    /// terminates in a complete pair.
    pub fn fsa_reconstruct(&self, codes: &[usize], max_len: usize) -> Vec<Token> {
        // Minimal completion from just after a curve end: loop, face and
        // sketch ends plus a full extrusion.
        const CLOSE_COST: usize = 22;
        let curve_cost = |token: Token| match token {
            Token::LINE => Some(4usize),
            Token::ARC => Some(6),
            Token::CIRCLE => Some(10),
            _ => None,
        };
        let cap = max_len.min(self.config.max_pair_len - 1);
        assert!(cap >= 26, "cap below the smallest complete pair");
        let mut automaton = Automaton::new();
        let mut tokens: Vec<Token> = Vec::new();
        while tokens.len() < cap {
            let dist = self
                .decode_codes(codes, &tokens)
                .expect("prefix stays within the cap");
            let mask = automaton.current_mask().clone();
            let remaining = cap - tokens.len();
            let mut best: Option<(f64, Token)> = None;
            for token in mask.allowed.iter() {
                if let Some(cost) = curve_cost(token) {
                    if cost + CLOSE_COST > remaining {
                        continue;
                    }
                }
                let p = dist[token.index() as usize];
                match best {
                    Some((bp, _)) if p <= bp => {}
                    _ => best = Some((p, token)),
                }
            }
            let (_, token) = best.expect("budget always leaves a closing option");
            automaton.step(token).expect("mask membership");
            tokens.push(token);
            if matches!(automaton.state(), FsaState::AfterExtrusionEnd) {
                break;
            }
        }
        tokens
    }

    /// Code-to-backbone-id mapping table from the trained adapters.
    pub fn id_mapping(&self) -> Result<Vec<u32>, VqError> {
        let adapters = self.adapters.as_ref().ok_or(VqError::MissingAdapters)?;
        let backbone = self.backbone.as_ref().ok_or(VqError::MissingAdapters)?;
        Ok((0..self.codebook.size())
            .map(|code| adapters.map_to_id(self.codebook.entry(code), backbone))
            .collect())
    }

    /// Encodes a model into backbone ids: per pair, the primitive codes
    /// mapped through the adapters, each pair closed by the separator id.
    pub fn cad_encode(&self, model: &CadModel) -> Result<Vec<u32>, VqError> {
        let mapping = self.id_mapping()?;
        let tokens = serialize_model(model);
        let mut ids = Vec::new();
        for pair_tokens in split_pairs(&tokens)? {
            let (_, codes, _) = self.encode_pair(&pair_tokens)?;
            for code in codes {
                ids.push(mapping[code]);
            }
            ids.push(SEPARATOR_ID);
        }
        Ok(ids)
    }

    /// Decodes backbone ids back to a model: ids invert to nearest codebook
    /// codes via the adapters, and each pair is unrolled under the
    /// automaton so the result always parses.
    pub fn cad_decode(&self, ids: &[u32]) -> Result<CadModel, VqError> {
        let adapters = self.adapters.as_ref().ok_or(VqError::MissingAdapters)?;
        let backbone = self.backbone.as_ref().ok_or(VqError::MissingAdapters)?;
        let mapping = self.id_mapping()?;
        let mapped: std::collections::HashSet<u32> = mapping.iter().copied().collect();

        let mut tokens: Vec<Token> = Vec::new();
        let mut group: Vec<usize> = Vec::new();
        for &id in ids {
            if id == SEPARATOR_ID {
                if group.is_empty() {
                    continue;
                }
                let pair = self.fsa_reconstruct(&group, self.config.max_pair_len);
                tokens.extend(pair);
                group.clear();
            } else {
                if !mapped.contains(&id) {
                    return Err(VqError::UnknownId { id });
                }
                let down = adapters.map_to_vector(id, backbone);
                group.push(self.codebook.quantize(&down));
            }
        }
        if !group.is_empty() {
            let pair = self.fsa_reconstruct(&group, self.config.max_pair_len);
            tokens.extend(pair);
        }
        Ok(parse_model(&tokens)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use crate::fsa::BranchProbs;
    use crate::sem::validate_sequence;
    use crate::vq::adapter::{train_adapters, AdapterTrainConfig};
    use crate::vq::codebook::Codebook;
    use crate::vq::net;
    use crate::vq::train::train_vqvae;
    use crate::vq::CodecConfig;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn untrained_codec(config: &CodecConfig, seed: u64) -> VqCodec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net::init_params(config, &mut rng);
        let codebook = Codebook::init(
            config.codebook_size,
            config.d_model,
            config.ema_decay,
            &mut rng,
        );
        VqCodec {
            config: config.clone(),
            params,
            codebook,
            adapters: None,
            backbone: None,
        }
    }

    fn with_adapters(mut codec: VqCodec, seed: u64) -> VqCodec {
        let backbone = MockBackbone::seeded(4 * codec.config.codebook_size, 64, seed);
        let train = AdapterTrainConfig {
            epochs: 20,
            ..AdapterTrainConfig::default()
        };
        let (adapters, _) = train_adapters(&codec, &backbone, &train, seed).unwrap();
        codec.adapters = Some(adapters);
        codec.backbone = Some(backbone);
        codec
    }

    fn circle_model_tokens() -> Vec<Token> {
        crate::sem::tokens_from_text(
            "circle 40 31 31 40 22 31 31 22 <curve_end> <loop_end> <face_end> <sketch_end> \
             add 10 50 31 31 31 1 0 0 0 1 0 0 0 1 31 31 31 <extrusion_end>",
        )
        .unwrap()
    }

    #[test]
    fn single_active_row_equals_global_max_pool() {
        let config = CodecConfig::tiny();
        let codec = untrained_codec(&config, 0);
        let tokens = circle_model_tokens();
        let item = PairItem {
            tokens: tokens.clone(),
            mask_rows: vec![vec![true; tokens.len()]],
        };
        let (pooled, _, _) = codec.encode_item(&item);

        let mut g = Graph::new(&codec.params);
        let hidden = net::encode_hidden(&mut g, &config, &tokens);
        let h = g.value(hidden);
        for c in 0..h.cols {
            let global_max = (0..h.rows).map(|r| h.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(pooled[0][c], global_max);
        }
    }

    #[test]
    fn identical_primitives_pool_identically_without_positions() {
        // Three single-line loops, the first two with identical token
        // content span-wise (loop variant). Without positional encodings
        // the encoder is permutation-equivariant, so their pooled vectors
        // coincide; with positions they differ.
        let tokens = crate::sem::tokens_from_text(
            "line 9 9 <curve_end> <loop_end> line 9 9 <curve_end> <loop_end> \
             circle 40 31 31 40 22 31 31 22 <curve_end> <loop_end> <face_end> <sketch_end> \
             add 10 50 31 31 31 1 0 0 0 1 0 0 0 1 31 31 31 <extrusion_end>",
        )
        .unwrap();
        for (use_positions, expect_equal) in [(false, true), (true, false)] {
            let config = CodecConfig {
                use_positions,
                variant: crate::tokenize::Variant::Loop,
                ..CodecConfig::tiny()
            };
            let codec = untrained_codec(&config, 1);
            let item = PairItem::prepare(&tokens, &config).unwrap();
            let (pooled, _, _) = codec.encode_item(&item);
            let equal = pooled[0]
                .iter()
                .zip(&pooled[1])
                .all(|(a, b)| (a - b).abs() < 1e-12);
            assert_eq!(equal, expect_equal, "use_positions = {use_positions}");
        }
    }

    #[test]
    fn minimal_model_encodes_to_primitive_count_plus_separator() {
        let config = CodecConfig::tiny();
        let codec = with_adapters(untrained_codec(&config, 2), 3);
        let tokens = circle_model_tokens();
        let model = parse_model(&tokens).unwrap();
        let ids = codec.cad_encode(&model).unwrap();
        assert_eq!(ids.len(), 5, "4 primitive ids plus one separator");
        assert_eq!(*ids.last().unwrap(), SEPARATOR_ID);
        assert!(ids[..4].iter().all(|&id| id != SEPARATOR_ID));
        // Ids are always strictly shorter than the token stream.
        assert!(ids.len() < tokens.len());
    }

    #[test]
    fn unknown_id_rejected() {
        let config = CodecConfig::tiny();
        let codec = with_adapters(untrained_codec(&config, 4), 5);
        let mapping = codec.id_mapping().unwrap();
        let unknown = (1..u32::MAX)
            .find(|id| !mapping.contains(id))
            .unwrap();
        assert_eq!(
            codec.cad_decode(&[unknown, SEPARATOR_ID]),
            Err(VqError::UnknownId { id: unknown })
        );
    }

    #[test]
    fn fsa_reconstruction_is_always_syntactically_valid() {
        // Even an untrained decoder yields a parseable pair under masks:
        // the budgeted unroll always closes the structure.
        for seed in [6, 16, 26] {
            let config = CodecConfig::tiny();
            let codec = untrained_codec(&config, seed);
            let tokens = circle_model_tokens();
            let (_, codes, _) = codec.encode_pair(&tokens).unwrap();
            let reconstruction = codec.fsa_reconstruct(&codes, 127);
            let report = validate_sequence(&reconstruction);
            assert!(
                report.syntactically_valid(),
                "masked unroll must parse (seed {seed}): {report:?}"
            );
        }
    }

    #[test]
    fn cad_round_trip_on_a_briefly_trained_codec() {
        let corpus = synth_corpus(30, 6, 48, &BranchProbs::default().single_pair())
            .unwrap()
            .sequences();
        let config = CodecConfig {
            epochs: 8,
            batch_size: 3,
            learn_rate: 1e-3,
            ..CodecConfig::tiny()
        };
        let (codec, _) = train_vqvae(&corpus, &config, 0).unwrap();
        let codec = with_adapters(codec, 7);
        let model = parse_model(&corpus[0]).unwrap();
        let ids = codec.cad_encode(&model).unwrap();
        assert!(ids.len() < corpus[0].len());
        let decoded = codec.cad_decode(&ids).unwrap();
        assert_eq!(decoded.pairs.len(), model.pairs.len());
        assert!(decoded.is_valid());
    }

    #[test]
    fn too_long_pair_rejected() {
        let config = CodecConfig {
            max_pair_len: 16,
            ..CodecConfig::tiny()
        };
        let codec = untrained_codec(&config, 8);
        let err = codec.encode_pair(&circle_model_tokens()).unwrap_err();
        assert_eq!(err, VqError::SequenceTooLong { len: 32, max: 16 });
    }

    #[test]
    fn split_pairs_covers_the_sequence() {
        let corpus = synth_corpus(
            31,
            10,
            160,
            &BranchProbs {
                extend_model: 0.8,
                ..BranchProbs::default()
            },
        )
        .unwrap();
        for entry in &corpus.entries {
            let pairs = split_pairs(&entry.tokens).unwrap();
            let total: usize = pairs.iter().map(|p| p.len()).sum();
            assert_eq!(total, entry.tokens.len());
            for pair in &pairs {
                assert_eq!(*pair.last().unwrap(), Token::EXTRUSION_END);
            }
        }
    }
}
