//! Memory-driven sparse attention steering (MDSAM) for causal decoders.
//!
//! At every decoder layer the last token's attention over the image-token
//! span is min-max normalized, top-k sparsified and pushed into a rolling
//! memory. The memory is collapsed into an exponentially decayed mean and
//! blended back into the attention row before value mixing.
//!
//! The crate hosts the mechanism inside a small seeded decoder so that the
//! intervention can be traced, compared against a baseline, and swept over
//! hyperparameter grids.

pub mod attention;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod harness;
pub mod trace;

pub use attention::{AttentionRow, HeadedAttention, TokenSpan};
pub use decoder::{DecodeSession, ModelParams, PromptLayout};
pub use engine::{LayerMemory, MdsamConfig, RenormMode, ResetPolicy, SparseImageAttention};
pub use error::{MdsamError, Result};
pub use trace::{DecodeTrace, PeakReport, TraceRecord};
