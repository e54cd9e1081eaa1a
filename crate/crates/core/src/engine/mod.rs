//! The steering pipeline applied at every decoder layer.
//!
//! One [`layer_step`] runs, in order: head averaging, image-span extraction,
//! min-max normalization, top-k sparsification, a memory push, decayed
//! aggregation over the post-push memory, and the blend back into every
//! head's last-token row.

mod config;
mod memory;
mod ops;

pub use config::{MdsamConfig, RenormMode, ResetPolicy, DEFAULT_WINDOW};
pub use memory::LayerMemory;
pub use ops::{
    aggregate_weighted_mean, align_attention, min_max_normalize, sparsity_budget, top_k_sparsify,
    SparseImageAttention, DEGENERATE_RANGE,
};

use crate::attention::{extract_image_slice, head_average, AttentionRow, TokenSpan};
use crate::error::{MdsamError, Result};

/// Runs the full pipeline on one layer's last-token rows.
///
/// `memory` receives exactly one push on success and is left untouched on
/// error. The returned rows keep their head tags.
pub fn layer_step(
    rows: &[AttentionRow],
    memory: &mut LayerMemory,
    cfg: &MdsamConfig,
    span: TokenSpan,
) -> Result<Vec<AttentionRow>> {
    cfg.validate()?;
    let averaged = head_average(rows)?;
    let slice = extract_image_slice(&averaged, span)?;
    // weights are softmax outputs, so the absolute value is a no-op
    let normalized = min_max_normalize(&slice)?;
    let sparse = top_k_sparsify(&normalized, cfg.tau)?;
    if memory.capacity() != cfg.window {
        return Err(MdsamError::Precondition(format!(
            "memory capacity {} does not match window {}",
            memory.capacity(),
            cfg.window
        )));
    }

    memory.push(sparse)?;
    let aggregate = aggregate_weighted_mean(memory, cfg.alpha)?;
    rows.iter()
        .map(|row| align_attention(row, &aggregate, cfg.beta, span, cfg.renorm))
        .collect()
}
