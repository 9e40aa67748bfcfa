//! Property tests for the numeric invariants that must hold on any input.

use metaheac::features::{
    embed_example, CampaignField, EmbeddingTable, FeatureSchema, RawExample, UserField,
};
use metaheac::metrics::{auc, precision_recall_at};
use metaheac::params::ParamSet;
use metaheac::tape::Tape;
use metaheac::tensor::Tensor;
use proptest::prelude::*;

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs as f64
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_stay_positive(
        logits in prop::collection::vec(-50.0f64..50.0, 1..24),
    ) {
        let mut tape = Tape::new();
        let n = logits.len();
        let x = tape.leaf(Tensor::matrix(1, n, logits).unwrap());
        let s = tape.softmax_rows(x);
        let row = tape.value(s).data();
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sorted_auc_equals_pairwise_oracle(
        raw in prop::collection::vec((0u8..=1, 0u8..=9), 4..120),
    ) {
        let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
        // Small score alphabet forces heavy ties.
        let scores: Vec<f64> = raw.iter().map(|(_, s)| *s as f64 / 9.0).collect();
        prop_assume!(labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0));
        let fast = auc(&scores, &labels).unwrap();
        let brute = pairwise_auc(&scores, &labels);
        prop_assert_eq!(fast, brute);
    }

    #[test]
    fn auc_invariant_under_strictly_increasing_transforms(
        raw in prop::collection::vec((0u8..=1, -50i32..=50), 4..60),
    ) {
        let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
        let scores: Vec<f64> = raw.iter().map(|(_, s)| *s as f64).collect();
        prop_assume!(labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0));
        // x^3 + 40x is strictly increasing and exact on this integer grid,
        // so the transform cannot merge distinct scores through rounding.
        let mapped: Vec<f64> = scores.iter().map(|s| s.powi(3) + 40.0 * s).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn precision_recall_count_the_same_intersection(
        raw in prop::collection::vec((0u8..=50, any::<bool>()), 2..150),
        k_percent in 1.0f64..60.0,
    ) {
        let ids: Vec<String> = (0..raw.len()).map(|i| format!("u{i:03}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let actual: Vec<bool> = raw.iter().map(|(_, a)| *a).collect();
        prop_assume!(actual.iter().any(|&a| a));
        let (p, r) = precision_recall_at(&id_refs, &scores, &actual, k_percent).unwrap();
        let top_k = ((k_percent / 100.0 * raw.len() as f64).floor() as usize).max(1);
        let total = actual.iter().filter(|&&a| a).count();
        let hits_from_p = p * top_k as f64;
        let hits_from_r = r * total as f64;
        prop_assert!((hits_from_p - hits_from_r).abs() < 1e-9);
        prop_assert!((hits_from_p - hits_from_p.round()).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
    }

    #[test]
    fn multi_valued_field_is_order_free(
        ids in prop::collection::vec(0usize..12, 1..8),
        rotation in 0usize..8,
    ) {
        let schema = FeatureSchema::new(
            vec![CampaignField { name: "c".into(), vocab: 2 }],
            vec![UserField { name: "tags".into(), vocab: 12, multi_valued: true }],
        ).unwrap();
        let mut params = ParamSet::new();
        let mut rng = metaheac::rng::rng_for(5, "prop-embed");
        metaheac::features::init_embeddings(&schema, 3, &mut params, &mut rng).unwrap();
        let table = EmbeddingTable::from_params(&schema, &params, 3).unwrap();

        let mut permuted = ids.clone();
        permuted.rotate_left(rotation % ids.len().max(1));
        let a = embed_example(&schema, &table, &[0], &RawExample {
            user_id: "u".into(), label: 1, field_ids: vec![ids],
        }).unwrap();
        let b = embed_example(&schema, &table, &[0], &RawExample {
            user_id: "u".into(), label: 1, field_ids: vec![permuted],
        }).unwrap();
        prop_assert_eq!(a.user_emb.data(), b.user_emb.data());
    }

    #[test]
    fn user_mean_is_field_order_free(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..6),
        rotation in 0usize..6,
    ) {
        let m = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let emb = Tensor::matrix(m, 4, flat).unwrap();
        let mut rotated_rows = rows.clone();
        rotated_rows.rotate_left(rotation % m);
        let flat_rot: Vec<f64> = rotated_rows.iter().flatten().copied().collect();
        let emb_rot = Tensor::matrix(m, 4, flat_rot).unwrap();
        let a = metaheac::features::user_mean(&emb).unwrap();
        let b = metaheac::features::user_mean(&emb_rot).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
