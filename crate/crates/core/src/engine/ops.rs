//! The per-layer arithmetic of the pipeline: normalize, sparsify, aggregate,
//! and blend.

use crate::attention::{write_image_slice, AttentionRow, TokenSpan};
use crate::engine::config::{validate_alpha, validate_beta, validate_tau, RenormMode};
use crate::engine::memory::LayerMemory;
use crate::error::{MdsamError, Result};

/// Denominators below this are treated as a constant input.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// Absorbs representation error in `tau * n` before flooring, so that
/// e.g. `0.6 * 5` counts as 3.
const BUDGET_SLACK: f64 = 1e-9;

/// A normalized, top-k sparsified image slice; one memory entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseImageAttention {
    values: Vec<f64>,
    nnz: usize,
}

impl SparseImageAttention {
    /// Wraps an already sparse vector. Entries must lie in [0, 1].
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MdsamError::Domain(
                "sparse attention entries must lie in [0, 1]".into(),
            ));
        }
        let nnz = values.iter().filter(|v| **v != 0.0).count();
        Ok(Self { values, nnz })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Min-max rescales `v` into [0, 1]. A constant vector maps to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(MdsamError::Domain(
            "cannot normalize an empty vector".into(),
        ));
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if range < DEGENERATE_RANGE {
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter()
        .map(|&x| ((x - lo) / range).clamp(0.0, 1.0))
        .collect())
}

/// Number of positions kept out of `n`: `max(1, floor(tau * n))`, capped at `n`.
pub fn sparsity_budget(tau: f64, n: usize) -> usize {
    let k = (tau * n as f64 + BUDGET_SLACK).floor() as usize;
    k.max(1).min(n)
}

/// Keeps the `k` largest entries of `v` (lower index wins ties) and zeroes
/// the rest.
pub fn top_k_sparsify(v: &[f64], tau: f64) -> Result<SparseImageAttention> {
    validate_tau(tau)?;
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(MdsamError::Domain(
            "top-k input must be normalized into [0, 1]".into(),
        ));
    }
    let k = sparsity_budget(tau, v.len());

    let mut order: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps ascending index order among equal values
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));

    let mut values = vec![0.0; v.len()];
    for &i in order.iter().take(k) {
        values[i] = v[i];
    }
    SparseImageAttention::from_values(values)
}

/// Exponentially decayed mean over the memory, most recent entry weighted
/// by `alpha`, the next by `alpha^2`, and so on.
pub fn aggregate_weighted_mean(memory: &LayerMemory, alpha: f64) -> Result<Vec<f64>> {
    validate_alpha(alpha)?;
    let width = memory
        .entry_len()
        .ok_or_else(|| MdsamError::Precondition("cannot aggregate an empty memory".into()))?;

    let weights: Vec<f64> = std::iter::successors(Some(alpha), |w| Some(w * alpha))
        .take(memory.len())
        .collect();
    let total: f64 = weights.iter().sum();

    // normalized weights first, so a single entry comes back bit-exact
    let mut acc = vec![0.0; width];
    for (entry, w) in memory.iter().zip(&weights) {
        let share = w / total;
        acc.iter_mut()
            .zip(entry.values())
            .for_each(|(a, &x)| *a += share * x);
    }

    // the shares sum to 1 only up to rounding; keep the result convex
    for (i, a) in acc.iter_mut().enumerate() {
        let (lo, hi) = memory
            .iter()
            .map(|e| e.values()[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        *a = a.clamp(lo, hi);
    }
    Ok(acc)
}

/// Blends `agg` into the span of `row`: `(slice + beta * agg) / (1 + beta)`.
///
/// `beta == 0` returns the row untouched in both modes.
pub fn align_attention(
    row: &AttentionRow,
    agg: &[f64],
    beta: f64,
    span: TokenSpan,
    renorm: RenormMode,
) -> Result<AttentionRow> {
    validate_beta(beta)?;
    span.check_within(row.len())?;
    if agg.len() != span.len() {
        return Err(MdsamError::Dimension(format!(
            "aggregate has length {}, span has length {}",
            agg.len(),
            span.len()
        )));
    }
    if beta == 0.0 {
        return Ok(row.clone());
    }

    let blended: Vec<f64> = row.weights[span.range()]
        .iter()
        .zip(agg)
        .map(|(&s, &a)| (s + beta * a) / (1.0 + beta))
        .collect();
    let mut out = write_image_slice(row, span, &blended)?;

    if renorm == RenormMode::RowRenormalize {
        let total = out.sum();
        if total > 0.0 {
            out.weights.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(out)
}
