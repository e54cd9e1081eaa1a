mod common;

use common::*;
use mdsam::engine::{
    aggregate_weighted_mean, align_attention, layer_step, min_max_normalize, sparsity_budget,
    top_k_sparsify,
};
use mdsam::{
    AttentionRow, LayerMemory, MdsamConfig, RenormMode, ResetPolicy, SparseImageAttention,
    TokenSpan,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows_from(heads: &[Vec<f64>]) -> Vec<AttentionRow> {
    heads
        .iter()
        .enumerate()
        .map(|(h, w)| AttentionRow::new(w.clone(), Some(h)))
        .collect()
}

#[test]
fn layer_steps_match_oracle_over_many_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let n = rng.gen_range(4..40);
        let start = rng.gen_range(0..n - 1);
        let end = rng.gen_range(start..n);
        let span = TokenSpan::new(start, end).unwrap();
        let cfg = MdsamConfig {
            tau: rng.gen_range(0.05..=1.0),
            alpha: rng.gen_range(0.05..0.99),
            beta: rng.gen_range(0.0..2.0),
            window: rng.gen_range(1..10),
            renorm: if trial % 2 == 0 {
                RenormMode::RowRenormalize
            } else {
                RenormMode::Verbatim
            },
            reset: ResetPolicy::Persistent,
        };
        let num_heads = rng.gen_range(1..4);

        let mut memory = LayerMemory::new(cfg.window).unwrap();
        let mut oracle_memory: Vec<Vec<f64>> = Vec::new();
        for _layer in 0..12 {
            let heads: Vec<Vec<f64>> = (0..num_heads)
                .map(|_| random_stochastic(&mut rng, n))
                .collect();
            let got = layer_step(&rows_from(&heads), &mut memory, &cfg, span).unwrap();
            let (want, next) = pipeline_oracle(&heads, &oracle_memory, &cfg, start, end);
            oracle_memory = next;
            for (g, w) in got.iter().zip(&want) {
                assert!(max_abs_diff(&g.weights, w) < 1e-9, "trial {trial}");
            }
            assert_eq!(memory.len(), oracle_memory.len());
            for (held, expected) in memory.iter().zip(&oracle_memory) {
                assert!(max_abs_diff(held.values(), expected) < 1e-12);
            }
        }
    }
}

#[test]
fn pipeline_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let heads: Vec<Vec<f64>> = (0..3).map(|_| random_stochastic(&mut rng, 20)).collect();
    let span = TokenSpan::new(2, 15).unwrap();
    let cfg = MdsamConfig::minigpt4();
    let run = || {
        let mut mem = LayerMemory::new(cfg.window).unwrap();
        let mut outs = Vec::new();
        for _ in 0..10 {
            outs.push(layer_step(&rows_from(&heads), &mut mem, &cfg, span).unwrap());
        }
        (outs, mem)
    };
    assert_eq!(run(), run());
}

#[test]
fn recency_weighting_two_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let n = rng.gen_range(1..16);
        let alpha = rng.gen_range(0.01..0.99);
        let u = random_unit_vector(&mut rng, n);
        let w = random_unit_vector(&mut rng, n);
        let mut mem = LayerMemory::new(4).unwrap();
        mem.push(SparseImageAttention::from_values(w.clone()).unwrap())
            .unwrap();
        mem.push(SparseImageAttention::from_values(u.clone()).unwrap())
            .unwrap();
        let got = aggregate_weighted_mean(&mem, alpha).unwrap();
        for j in 0..n {
            let want = (alpha * u[j] + alpha * alpha * w[j]) / (alpha + alpha * alpha);
            assert!((got[j] - want).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn window_law(capacity in 1usize..12, pushes in 0usize..40) {
        let mut mem = LayerMemory::new(capacity).unwrap();
        for p in 0..pushes {
            let tag = (p + 1) as f64 / 64.0;
            mem.push(SparseImageAttention::from_values(vec![tag]).unwrap()).unwrap();
        }
        prop_assert_eq!(mem.len(), pushes.min(capacity));
        let held: Vec<f64> = mem.iter().map(|e| e.values()[0]).collect();
        let expected: Vec<f64> = (0..pushes).rev().take(capacity).map(|p| (p + 1) as f64 / 64.0).collect();
        prop_assert_eq!(held, expected);
    }

    #[test]
    fn normalization_range(v in prop::collection::vec(-10.0f64..10.0, 1..64)) {
        let out = min_max_normalize(&v).unwrap();
        prop_assert!(out.iter().all(|x| (0.0..=1.0).contains(x)));
        let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread >= 1e-12 {
            prop_assert!(out.contains(&0.0));
            prop_assert!(out.contains(&1.0));
        }
    }

    #[test]
    fn sparsity_budget_matches_count(n in 1usize..=64, tau in 0.001f64..=1.0) {
        prop_assert_eq!(sparsity_budget(tau, n), budget_oracle(tau, n));
        let v: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) / n as f64).collect();
        let s = top_k_sparsify(&v, tau).unwrap();
        prop_assert_eq!(s.nnz(), budget_oracle(tau, n));
    }

    #[test]
    fn renormalized_rows_sum_to_one(
        logits in prop::collection::vec(-4.0f64..4.0, 2..48),
        beta in 0.0f64..4.0,
        agg_seed in any::<u64>(),
    ) {
        let row = AttentionRow::averaged(mdsam::attention::softmax(&logits));
        let n = row.len();
        let span = TokenSpan::new(0, n / 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(agg_seed);
        let agg = random_unit_vector(&mut rng, span.len());
        let out = align_attention(&row, &agg, beta, span, RenormMode::RowRenormalize).unwrap();
        prop_assert!((out.sum() - 1.0).abs() < 1e-9);
    }
}
