//! Scaled dot-product attention and helpers for the image-token span of
//! the last query row.
//!
//! Everything here is computed in `f64`. Causal masking is additive `-inf`
//! before the softmax so masked entries come out as exact zeros.

use std::ops::RangeInclusive;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MdsamError, Result};

/// Inclusive, 0-based range of sequence positions occupied by image tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    start: usize,
    end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(MdsamError::Domain(format!(
                "token span start {start} exceeds end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of positions covered; never zero.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self) -> RangeInclusive<usize> {
        self.start..=self.end
    }

    /// Fails unless the span fits inside a row of `row_len` entries.
    pub fn check_within(&self, row_len: usize) -> Result<()> {
        if self.end >= row_len {
            return Err(MdsamError::Index(format!(
                "span [{}, {}] does not fit a row of length {row_len}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// One attention distribution: the weights a single query position places on
/// every key position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub weights: Vec<f64>,
    /// `None` for head-averaged rows.
    pub head: Option<usize>,
}

impl AttentionRow {
    pub fn new(weights: Vec<f64>, head: Option<usize>) -> Self {
        Self { weights, head }
    }

    pub fn averaged(weights: Vec<f64>) -> Self {
        Self {
            weights,
            head: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Per-head attention matrices of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadedAttention {
    pub heads: Vec<Array2<f64>>,
    pub d_k: usize,
}

impl HeadedAttention {
    pub fn seq_len(&self) -> usize {
        self.heads.first().map_or(0, |h| h.nrows())
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// The last query row of every head, tagged with its head index.
    pub fn last_rows(&self) -> Vec<AttentionRow> {
        self.heads
            .iter()
            .enumerate()
            .map(|(h, m)| {
                let last = m.nrows() - 1;
                AttentionRow::new(m.row(last).to_vec(), Some(h))
            })
            .collect()
    }

    /// Replaces the last query row of every head.
    pub fn set_last_rows(&mut self, rows: &[AttentionRow]) -> Result<()> {
        if rows.len() != self.heads.len() {
            return Err(MdsamError::Dimension(format!(
                "{} replacement rows for {} heads",
                rows.len(),
                self.heads.len()
            )));
        }
        for (m, row) in self.heads.iter_mut().zip(rows) {
            if row.len() != m.ncols() {
                return Err(MdsamError::Dimension(format!(
                    "replacement row has length {}, expected {}",
                    row.len(),
                    m.ncols()
                )));
            }
            let last = m.nrows() - 1;
            m.row_mut(last)
                .iter_mut()
                .zip(&row.weights)
                .for_each(|(dst, &src)| *dst = src);
        }
        Ok(())
    }
}

/// Numerically stable softmax. Entries equal to `-inf` map to exact zeros.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `softmax(Q Kᵀ / sqrt(d_k))`, optionally with a causal mask.
pub fn scaled_dot_attention(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    causal: bool,
) -> Result<Array2<f64>> {
    if q.dim() != k.dim() {
        return Err(MdsamError::Dimension(format!(
            "query shape {:?} differs from key shape {:?}",
            q.dim(),
            k.dim()
        )));
    }
    let d_k = q.ncols();
    if d_k == 0 {
        return Err(MdsamError::Domain(
            "head size d_k must be at least 1".into(),
        ));
    }

    let scale = (d_k as f64).sqrt();
    let mut scores = q.dot(&k.t()) / scale;
    for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        if causal {
            row.iter_mut()
                .skip(i + 1)
                .for_each(|x| *x = f64::NEG_INFINITY);
        }
        let probs = softmax(&row.to_vec());
        row.iter_mut().zip(probs).for_each(|(dst, p)| *dst = p);
    }
    Ok(scores)
}

/// Elementwise arithmetic mean of per-head rows.
pub fn head_average(rows: &[AttentionRow]) -> Result<AttentionRow> {
    let first = rows
        .first()
        .ok_or_else(|| MdsamError::Domain("head_average needs at least one row".into()))?;
    let n = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(MdsamError::Dimension(format!(
            "head rows have lengths {n} and {}",
            bad.len()
        )));
    }

    let count = rows.len() as f64;
    let mut acc = vec![0.0; n];
    for row in rows {
        acc.iter_mut().zip(&row.weights).for_each(|(a, &w)| *a += w);
    }
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(AttentionRow::averaged(acc))
}

pub fn extract_image_slice(row: &AttentionRow, span: TokenSpan) -> Result<Vec<f64>> {
    span.check_within(row.len())?;
    Ok(row.weights[span.range()].to_vec())
}

/// Returns a copy of `row` with the span replaced by `values`.
pub fn write_image_slice(
    row: &AttentionRow,
    span: TokenSpan,
    values: &[f64],
) -> Result<AttentionRow> {
    span.check_within(row.len())?;
    if values.len() != span.len() {
        return Err(MdsamError::Dimension(format!(
            "{} values for a span of length {}",
            values.len(),
            span.len()
        )));
    }
    if values.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(MdsamError::Domain(
            "attention values written into a row must be non-negative".into(),
        ));
    }
    let mut out = row.clone();
    out.weights[span.range()].copy_from_slice(values);
    Ok(out)
}
