//! A small seeded causal decoder hosting the steering hook, plus greedy
//! generation over a synthetic image + text prompt.

mod model;

pub use model::{
    build_model, greedy_token, sinusoidal_positions, ForwardOutput, LayerAttention, LayerParams,
    ModelDims, ModelParams, FFN_MULTIPLIER, WEIGHT_BOUND,
};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::TokenSpan;
use crate::engine::{LayerMemory, MdsamConfig, ResetPolicy, DEFAULT_WINDOW};
use crate::error::{MdsamError, Result};
use crate::trace::{image_attention_mass, DecodeTrace, TraceMetadata, TraceRecord};

/// Image features are drawn uniformly from `[-IMAGE_FEATURE_BOUND, IMAGE_FEATURE_BOUND]`.
pub const IMAGE_FEATURE_BOUND: f64 = 1.0;

/// Image tokens first, then text tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptLayout {
    pub seed: u64,
    pub span: TokenSpan,
    /// `num_image_tokens x d_model`
    pub image_embeddings: Array2<f64>,
    pub text_tokens: Vec<u32>,
}

impl PromptLayout {
    /// Seeded synthetic prompt: uniform image features standing in for
    /// projector output, followed by uniformly drawn text token ids.
    pub fn synthetic(
        num_image_tokens: usize,
        num_text_tokens: usize,
        seed: u64,
        d_model: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        if num_image_tokens == 0 {
            return Err(MdsamError::config("num_image_tokens", "must be at least 1"));
        }
        if vocab_size == 0 {
            return Err(MdsamError::config("vocab_size", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image_embeddings = Array2::from_shape_simple_fn((num_image_tokens, d_model), || {
            rng.gen_range(-IMAGE_FEATURE_BOUND..=IMAGE_FEATURE_BOUND)
        });
        let text_tokens = (0..num_text_tokens)
            .map(|_| rng.gen_range(0..vocab_size as u32))
            .collect();
        Ok(Self {
            seed,
            span: TokenSpan::new(0, num_image_tokens - 1)?,
            image_embeddings,
            text_tokens,
        })
    }

    pub fn num_image_tokens(&self) -> usize {
        self.image_embeddings.nrows()
    }

    pub fn num_text_tokens(&self) -> usize {
        self.text_tokens.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.num_image_tokens() + self.num_text_tokens()
    }
}

/// One greedy generation run. Owns its memory and trace; sessions share
/// nothing and can be moved across threads.
#[derive(Clone, Debug)]
pub struct DecodeSession {
    params: ModelParams,
    layout: PromptLayout,
    cfg: Option<MdsamConfig>,
    memory: LayerMemory,
    generated: Vec<u32>,
    trace: DecodeTrace,
}

impl DecodeSession {
    /// `cfg = None` decodes without steering.
    pub fn new(
        params: ModelParams,
        layout: PromptLayout,
        cfg: Option<MdsamConfig>,
    ) -> Result<Self> {
        if layout.image_embeddings.ncols() != params.dims.d_model {
            return Err(MdsamError::Dimension(format!(
                "prompt features have width {}, model width is {}",
                layout.image_embeddings.ncols(),
                params.dims.d_model
            )));
        }
        if let Some(&bad) = layout
            .text_tokens
            .iter()
            .find(|&&t| t as usize >= params.dims.vocab_size)
        {
            return Err(MdsamError::Index(format!(
                "prompt token {bad} outside vocabulary of {}",
                params.dims.vocab_size
            )));
        }
        if let Some(cfg) = &cfg {
            cfg.validate()?;
        }
        let window = cfg.as_ref().map_or(DEFAULT_WINDOW, |c| c.window);
        let metadata = TraceMetadata {
            seed: params.seed,
            prompt_seed: layout.seed,
            dims: params.dims,
            num_image_tokens: layout.num_image_tokens(),
            num_text_tokens: layout.num_text_tokens(),
            config: cfg,
        };
        Ok(Self {
            memory: LayerMemory::new(window)?,
            trace: DecodeTrace::new(Some(metadata)),
            generated: Vec::new(),
            params,
            layout,
            cfg,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn layout(&self) -> &PromptLayout {
        &self.layout
    }

    pub fn config(&self) -> Option<&MdsamConfig> {
        self.cfg.as_ref()
    }

    pub fn memory(&self) -> &LayerMemory {
        &self.memory
    }

    pub fn generated(&self) -> &[u32] {
        &self.generated
    }

    pub fn trace(&self) -> &DecodeTrace {
        &self.trace
    }

    /// Prompt embeddings followed by the embeddings of generated tokens.
    pub fn sequence_embeddings(&self) -> Result<Array2<f64>> {
        let d = self.params.dims.d_model;
        let mut seq = Array2::<f64>::zeros((0, d));
        seq.append(Axis(0), self.layout.image_embeddings.view())
            .expect("widths checked in new");
        for &token in self.layout.text_tokens.iter().chain(&self.generated) {
            let row = self.params.token_embedding(token)?;
            seq.push_row(row.view())
                .expect("embedding width is d_model");
        }
        Ok(seq)
    }

    /// Runs one forward pass over the current sequence without appending a
    /// token. Steered sessions push into their memory as usual.
    pub fn forward_step(&mut self) -> Result<ForwardOutput> {
        let seq = self.sequence_embeddings()?;
        self.params.forward(
            seq.view(),
            self.cfg.as_ref(),
            &mut self.memory,
            self.layout.span,
        )
    }

    /// Generates `max_new_tokens` greedily and returns the tokens generated
    /// by this call along with the full trace so far.
    pub fn decode_greedy(&mut self, max_new_tokens: usize) -> Result<(Vec<u32>, DecodeTrace)> {
        if max_new_tokens == 0 {
            return Err(MdsamError::Domain(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        let first_new = self.generated.len();
        for _ in 0..max_new_tokens {
            if self.cfg.is_some_and(|c| c.reset == ResetPolicy::PerToken) {
                self.memory.clear();
            }
            let out = self.forward_step()?;
            let token = greedy_token(&out.logits);
            let step = self.generated.len() as u32 + 1;
            for (i, layer) in out.layers.iter().enumerate() {
                self.trace.records.push(TraceRecord {
                    step,
                    layer: i as u32 + 1,
                    image_mass: image_attention_mass(&layer.averaged, self.layout.span)?,
                    token_id: token,
                });
            }
            self.generated.push(token);
        }
        Ok((self.generated[first_new..].to_vec(), self.trace.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(cfg: Option<MdsamConfig>) -> DecodeSession {
        let dims = ModelDims::default();
        let params = build_model(42, dims).unwrap();
        let layout = PromptLayout::synthetic(16, 8, 7, dims.d_model, dims.vocab_size).unwrap();
        DecodeSession::new(params, layout, cfg).unwrap()
    }

    #[test]
    fn single_step_trace() {
        let mut s = session(None);
        let (tokens, trace) = s.decode_greedy(1).unwrap();
        assert_eq!(tokens.len(), 1);
        assert_eq!(trace.records.len(), 4);
        trace.validate().unwrap();
    }

    #[test]
    fn baseline_forward_leaves_memory_alone() {
        let mut s = session(None);
        let out = s.forward_step().unwrap();
        assert!(s.memory().is_empty());
        assert_eq!(out.logits.len(), 64);
        for layer in &out.layers {
            assert_eq!(layer.averaged.len(), 24);
            assert!((layer.averaged.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_beta_forward_matches_baseline_bits() {
        let mut base = session(None);
        let mut steered = session(Some(MdsamConfig::llava().with_beta(0.0)));
        let a = base.forward_step().unwrap();
        let b = steered.forward_step().unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(steered.memory().len(), 4);
    }

    #[test]
    fn per_token_reset_bounds_memory() {
        let cfg = MdsamConfig::llava().with_reset(ResetPolicy::PerToken);
        let mut s = session(Some(cfg));
        s.decode_greedy(3).unwrap();
        assert_eq!(s.memory().len(), 4);

        let mut p = session(Some(MdsamConfig::llava()));
        p.decode_greedy(3).unwrap();
        assert_eq!(p.memory().len(), 8);
    }

    #[test]
    fn sequence_grows_by_one_per_step() {
        let mut s = session(Some(MdsamConfig::llava()));
        for expected in 24..28 {
            assert_eq!(s.sequence_embeddings().unwrap().nrows(), expected);
            s.decode_greedy(1).unwrap();
        }
    }

    #[test]
    fn rejects_bad_prompt() {
        let dims = ModelDims::default();
        let params = build_model(1, dims).unwrap();
        let mut layout = PromptLayout::synthetic(4, 2, 1, 16, 64).unwrap();
        layout.text_tokens.push(64);
        assert!(DecodeSession::new(params, layout, None).is_err());
        assert!(PromptLayout::synthetic(0, 2, 1, 16, 64).is_err());
    }
}
