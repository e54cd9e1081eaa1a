mod common;

use common::*;
use mdsam::decoder::{build_model, ModelDims};
use mdsam::{DecodeSession, MdsamConfig, PromptLayout, RenormMode, ResetPolicy};

fn session(seed: u64, cfg: Option<MdsamConfig>) -> DecodeSession {
    let dims = ModelDims::default();
    let params = build_model(seed, dims).unwrap();
    let layout =
        PromptLayout::synthetic(16, 8, seed ^ 0x5eed, dims.d_model, dims.vocab_size).unwrap();
    DecodeSession::new(params, layout, cfg).unwrap()
}

#[test]
fn same_seed_same_model_and_tokens() {
    let a = build_model(11, ModelDims::default()).unwrap();
    let b = build_model(11, ModelDims::default()).unwrap();
    assert_eq!(a, b);
    let c = build_model(12, ModelDims::default()).unwrap();
    assert_ne!(a, c);

    let (ta, tra) = session(11, None).decode_greedy(10).unwrap();
    let (tb, trb) = session(11, None).decode_greedy(10).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(tra, trb);
}

#[test]
fn zero_beta_is_transparent() {
    for seed in 0..5 {
        let (base, base_trace) = session(seed, None).decode_greedy(12).unwrap();
        for renorm in [RenormMode::Verbatim, RenormMode::RowRenormalize] {
            let cfg = MdsamConfig::llava().with_beta(0.0).with_renorm(renorm);
            let (steered, steered_trace) = session(seed, Some(cfg)).decode_greedy(12).unwrap();
            assert_eq!(base, steered);
            assert_eq!(base_trace.records, steered_trace.records);
        }
    }
}

#[test]
fn first_layer_matches_oracle_at_first_step() {
    for seed in 0..4 {
        let baseline = session(seed, None).forward_step().unwrap();
        let heads: Vec<Vec<f64>> = baseline.layers[0]
            .heads
            .iter()
            .map(|r| r.weights.clone())
            .collect();
        let cfg = MdsamConfig::llava();
        let steered = session(seed, Some(cfg)).forward_step().unwrap();
        let (want, _) = pipeline_oracle(&heads, &[], &cfg, 0, 15);
        for (got, want) in steered.layers[0].heads.iter().zip(&want) {
            assert!(max_abs_diff(&got.weights, want) < 1e-9);
        }
    }
}

#[test]
fn memory_fills_to_window() {
    let dims = ModelDims::default();
    for window in [1, 3, 8, 20] {
        let cfg = MdsamConfig::deepseekvl().with_window(window);
        let mut s = session(3, Some(cfg));
        for step in 1..=6 {
            s.decode_greedy(1).unwrap();
            assert_eq!(s.memory().len(), (step * dims.num_layers).min(window));
        }
    }
}

#[test]
fn per_token_reset_holds_at_most_one_step() {
    let cfg = MdsamConfig::llava()
        .with_reset(ResetPolicy::PerToken)
        .with_window(32);
    let mut s = session(5, Some(cfg));
    for _ in 0..4 {
        s.decode_greedy(1).unwrap();
        assert_eq!(s.memory().len(), ModelDims::default().num_layers);
    }
}

#[test]
fn sequence_grows_by_one_per_step() {
    let mut s = session(8, None);
    assert_eq!(s.sequence_embeddings().unwrap().nrows(), 24);
    s.decode_greedy(3).unwrap();
    assert_eq!(s.sequence_embeddings().unwrap().nrows(), 27);
    assert_eq!(s.generated().len(), 3);
    let (more, trace) = s.decode_greedy(2).unwrap();
    assert_eq!(more.len(), 2);
    assert_eq!(trace.num_steps(), 5);
    assert_eq!(trace.records.len(), 5 * 4);
    trace.validate().unwrap();
}

#[test]
fn trace_metadata_describes_run() {
    let cfg = MdsamConfig::minigpt4();
    let (_, trace) = session(2, Some(cfg)).decode_greedy(2).unwrap();
    let meta = trace.metadata.unwrap();
    assert_eq!(meta.seed, 2);
    assert_eq!(meta.num_image_tokens, 16);
    assert_eq!(meta.num_text_tokens, 8);
    assert_eq!(meta.config, Some(cfg));
}

#[test]
fn bad_prompt_is_rejected() {
    let dims = ModelDims::default();
    let params = build_model(0, dims).unwrap();
    let narrow = PromptLayout::synthetic(4, 2, 0, dims.d_model + 1, dims.vocab_size).unwrap();
    assert!(DecodeSession::new(params.clone(), narrow, None).is_err());
    let mut layout = PromptLayout::synthetic(4, 2, 0, dims.d_model, dims.vocab_size).unwrap();
    layout.text_tokens[0] = dims.vocab_size as u32;
    assert!(DecodeSession::new(params.clone(), layout, None).is_err());
    let layout = PromptLayout::synthetic(4, 2, 0, dims.d_model, dims.vocab_size).unwrap();
    let bad = MdsamConfig {
        tau: 0.0,
        ..MdsamConfig::llava()
    };
    assert!(DecodeSession::new(params, layout, Some(bad)).is_err());
}
