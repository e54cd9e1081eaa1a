use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    head_average, scaled_dot_attention, AttentionRow, HeadedAttention, TokenSpan,
};
use crate::engine::{layer_step, LayerMemory, MdsamConfig};
use crate::error::{MdsamError, Result};

/// Weights are drawn uniformly from `[-WEIGHT_BOUND, WEIGHT_BOUND]`.
pub const WEIGHT_BOUND: f64 = 0.1;

/// Feed-forward hidden width as a multiple of `d_model`.
pub const FFN_MULTIPLIER: usize = 4;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Shape of a decoder; everything needed besides the seed to rebuild it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 2,
            d_model: 16,
            vocab_size: 64,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("vocab_size", self.vocab_size),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(MdsamError::config(key, "must be at least 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(MdsamError::config(
                "d_model",
                format!(
                    "{} is not divisible by num_heads = {}",
                    self.d_model, self.num_heads
                ),
            ));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub ffn_in: Array2<f64>,
    pub ffn_out: Array2<f64>,
}

/// Seeded weights of the toy decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    /// `vocab_size x d_model`
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// `d_model x vocab_size`
    pub unembedding: Array2<f64>,
}

/// Attention of one layer's last query position, after any steering.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    pub heads: Vec<AttentionRow>,
    pub averaged: AttentionRow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub layers: Vec<LayerAttention>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

/// Draws every weight from one ChaCha8 stream seeded with `seed`, in the
/// order: embedding, then per layer query/key/value/output/ffn_in/ffn_out,
/// then the unembedding.
pub fn build_model(seed: u64, dims: ModelDims) -> Result<ModelParams> {
    dims.validate()?;
    let d = dims.d_model;
    let hidden = FFN_MULTIPLIER * d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let embedding = uniform_matrix(&mut rng, dims.vocab_size, d, WEIGHT_BOUND);
    let layers = (0..dims.num_layers)
        .map(|_| LayerParams {
            query: uniform_matrix(&mut rng, d, d, WEIGHT_BOUND),
            key: uniform_matrix(&mut rng, d, d, WEIGHT_BOUND),
            value: uniform_matrix(&mut rng, d, d, WEIGHT_BOUND),
            output: uniform_matrix(&mut rng, d, d, WEIGHT_BOUND),
            ffn_in: uniform_matrix(&mut rng, d, hidden, WEIGHT_BOUND),
            ffn_out: uniform_matrix(&mut rng, hidden, d, WEIGHT_BOUND),
        })
        .collect();
    let unembedding = uniform_matrix(&mut rng, d, dims.vocab_size, WEIGHT_BOUND);

    Ok(ModelParams {
        dims,
        seed,
        embedding,
        layers,
        unembedding,
    })
}

/// Fixed sinusoidal position table, `len x d_model`.
pub fn sinusoidal_positions(len: usize, d_model: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d_model), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

impl ModelParams {
    pub fn token_embedding(&self, token: u32) -> Result<Array1<f64>> {
        let id = token as usize;
        if id >= self.dims.vocab_size {
            return Err(MdsamError::Index(format!(
                "token {token} outside vocabulary of {}",
                self.dims.vocab_size
            )));
        }
        Ok(self.embedding.row(id).to_owned())
    }

    /// Runs the decoder over `embeddings` (`n x d_model`, positions not yet
    /// added) and returns next-token logits for the last position.
    ///
    /// With `cfg` present, every layer's last-token rows go through
    /// [`layer_step`] before value mixing. Without it `memory` is not read or
    /// written.
    pub fn forward(
        &self,
        embeddings: ArrayView2<'_, f64>,
        cfg: Option<&MdsamConfig>,
        memory: &mut LayerMemory,
        span: TokenSpan,
    ) -> Result<ForwardOutput> {
        let (n, width) = embeddings.dim();
        if n == 0 {
            return Err(MdsamError::Domain(
                "forward pass needs a non-empty sequence".into(),
            ));
        }
        if width != self.dims.d_model {
            return Err(MdsamError::Dimension(format!(
                "embedding width {width}, model width {}",
                self.dims.d_model
            )));
        }
        span.check_within(n)?;

        let d_k = self.dims.d_k();
        let mut x = &embeddings + &sinusoidal_positions(n, width);
        let mut layers = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let h = layer_norm(&x);
            let q = h.dot(&layer.query);
            let k = h.dot(&layer.key);
            let v = h.dot(&layer.value);

            let heads = (0..self.dims.num_heads)
                .map(|head| {
                    let cols = s![.., head * d_k..(head + 1) * d_k];
                    scaled_dot_attention(q.slice(cols), k.slice(cols), true)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut attention = HeadedAttention { heads, d_k };

            if let Some(cfg) = cfg {
                let steered = layer_step(&attention.last_rows(), memory, cfg, span)?;
                attention.set_last_rows(&steered)?;
            }

            let last_rows = attention.last_rows();
            let averaged = head_average(&last_rows)?;
            layers.push(LayerAttention {
                heads: last_rows,
                averaged,
            });

            let mut context = Array2::<f64>::zeros((n, width));
            for (head, weights) in attention.heads.iter().enumerate() {
                let cols = s![.., head * d_k..(head + 1) * d_k];
                context.slice_mut(cols).assign(&weights.dot(&v.slice(cols)));
            }
            x = x + context.dot(&layer.output);

            let h = layer_norm(&x);
            let hidden = h.dot(&layer.ffn_in).mapv(|a| a.max(0.0));
            x = x + hidden.dot(&layer.ffn_out);
        }

        let last = layer_norm(&x).row(n - 1).to_owned();
        let logits = last.dot(&self.unembedding).to_vec();
        Ok(ForwardOutput { logits, layers })
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn greedy_token(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}
