//! Property tests over randomly built structured models: lossless
//! serialization, automaton completeness, text-form round trips, BPE
//! losslessness, and Chamfer symmetry.

use proptest::collection::vec;
use proptest::prelude::*;
use semkit::fsa::Automaton;
use semkit::geometry::{chamfer_distance, PointCloud};
use semkit::sem::{
    parse_model, serialize_model, tokens_from_indices, tokens_from_text, tokens_to_indices,
    tokens_to_text, BoolOp, CadModel, Curve, CurveKind, Extrusion, Face, Loop, Sketch, Token,
};
use semkit::tokenize::{bpe_fit, BpeModel};
use std::sync::OnceLock;

fn coord() -> impl Strategy<Value = u8> {
    0..=63u8
}

fn point() -> impl Strategy<Value = (u8, u8)> {
    (coord(), coord())
}

fn curve() -> impl Strategy<Value = Curve> {
    prop_oneof![
        point().prop_map(|p| Curve::line(p).unwrap()),
        (point(), point()).prop_map(|(a, b)| Curve::arc(a, b).unwrap()),
        (point(), point(), point(), point())
            .prop_map(|(a, b, c, d)| Curve::circle([a, b, c, d]).unwrap()),
    ]
}

fn sketch() -> impl Strategy<Value = Sketch> {
    vec(vec(vec(curve(), 1..4), 1..3), 1..3).prop_map(|faces| Sketch {
        faces: faces
            .into_iter()
            .map(|loops| Face {
                loops: loops.into_iter().map(|curves| Loop { curves }).collect(),
            })
            .collect(),
    })
}

fn extrusion() -> impl Strategy<Value = Extrusion> {
    (
        prop_oneof![Just(BoolOp::Add), Just(BoolOp::Cut), Just(BoolOp::Intersect)],
        [coord(), coord()],
        [coord(), coord(), coord()],
        vec(-1..=1i8, 9),
        coord(),
        [coord(), coord()],
    )
        .prop_map(|(op, v, t, r, s, o)| Extrusion {
            op,
            v,
            t,
            r: r.try_into().unwrap(),
            s,
            o,
        })
}

fn model() -> impl Strategy<Value = CadModel> {
    vec((sketch(), extrusion()), 1..3).prop_map(|pairs| CadModel { pairs })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn serialize_then_parse_is_identity(m in model()) {
        let tokens = serialize_model(&m);
        let parsed = parse_model(&tokens).unwrap();
        prop_assert_eq!(&parsed, &m);
        prop_assert_eq!(serialize_model(&parsed), tokens);
    }

    #[test]
    fn serialized_models_replay_through_the_automaton(m in model(), pads in 0usize..4) {
        let mut tokens = serialize_model(&m);
        tokens.extend(std::iter::repeat(Token::PAD).take(pads));
        prop_assert!(Automaton::replay(&tokens).is_ok());
        // Trailing pads parse away losslessly.
        let parsed = parse_model(&tokens).unwrap();
        prop_assert_eq!(parsed, m);
    }

    #[test]
    fn text_and_index_forms_round_trip(m in model()) {
        let tokens = serialize_model(&m);
        prop_assert_eq!(tokens_from_text(&tokens_to_text(&tokens)).unwrap(), tokens.clone());
        let indices: Vec<u32> = tokens_to_indices(&tokens).iter().map(|&i| i as u32).collect();
        prop_assert_eq!(tokens_from_indices(&indices).unwrap(), tokens);
    }

    #[test]
    fn bpe_is_lossless_on_unseen_models(m in model()) {
        static MODEL: OnceLock<BpeModel> = OnceLock::new();
        let bpe = MODEL.get_or_init(|| {
            let corpus: Vec<Vec<Token>> = (0..60)
                .map(|s| {
                    semkit::fsa::random_valid_sequence(
                        s,
                        96,
                        &semkit::fsa::BranchProbs::default(),
                    )
                    .unwrap()
                })
                .collect();
            bpe_fit(&corpus, 150).unwrap()
        });
        let tokens = serialize_model(&m);
        prop_assert_eq!(bpe.decode(&bpe.encode(&tokens)), tokens);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(
        a in vec([-1.0f64..1.0, -1.0..1.0, -1.0..1.0], 1..40),
        b in vec([-1.0f64..1.0, -1.0..1.0, -1.0..1.0], 1..40),
    ) {
        let a = PointCloud { points: a };
        let b = PointCloud { points: b };
        let forward = chamfer_distance(&a, &b).unwrap();
        let backward = chamfer_distance(&b, &a).unwrap();
        prop_assert_eq!(forward, backward);
        prop_assert!(forward >= 0.0);
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }
}
