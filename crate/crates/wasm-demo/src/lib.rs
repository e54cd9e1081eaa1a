//! Browser bindings for the steering pipeline. Every export takes plain
//! numbers or comma-separated text and returns a JSON string.

use mdsam::decoder::{build_model, ModelDims};
use mdsam::engine::{aggregate_weighted_mean, align_attention, min_max_normalize, top_k_sparsify};
use mdsam::trace::{detect_peaks, image_attention_mass, PeakReport};
use mdsam::{
    AttentionRow, DecodeSession, LayerMemory, MdsamConfig, PromptLayout, RenormMode, TokenSpan,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PipelineView {
    row: Vec<f64>,
    image_slice: Vec<f64>,
    normalized: Vec<f64>,
    sparse: Vec<f64>,
    aggregate: Vec<f64>,
    aligned: Vec<f64>,
    mass_before: f64,
    mass_after: f64,
}

#[derive(Serialize)]
struct RunView {
    tokens: Vec<u32>,
    /// Layer-mean image mass per step.
    mass: Vec<f64>,
    peaks: PeakReport,
}

#[derive(Serialize)]
struct CompareView {
    config: MdsamConfig,
    baseline: RunView,
    steered: RunView,
    divergence_step: Option<usize>,
}

fn parse_series(text: &str) -> Result<Vec<f64>, String> {
    text.split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| format!("`{s}` is not a number"))
        })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// One layer step with an empty memory: the row is normalized to sum 1, then
/// the image span `[span_start, span_end]` is steered.
pub fn layer_pipeline_json(
    row: &str,
    span_start: usize,
    span_end: usize,
    tau: f64,
    alpha: f64,
    beta: f64,
    renormalize: bool,
) -> Result<String, String> {
    let raw = parse_series(row)?;
    if raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("attention weights must be finite and non-negative".into());
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err("attention row must have positive total weight".into());
    }
    let row = AttentionRow::averaged(raw.iter().map(|x| x / total).collect());
    let span = TokenSpan::new(span_start, span_end).map_err(|e| e.to_string())?;
    span.check_within(row.len()).map_err(|e| e.to_string())?;
    let cfg = MdsamConfig::new(tau, alpha, beta).map_err(|e| e.to_string())?;
    let renorm = if renormalize {
        RenormMode::RowRenormalize
    } else {
        RenormMode::Verbatim
    };

    let image_slice = row.weights[span.range()].to_vec();
    let normalized = min_max_normalize(&image_slice).map_err(|e| e.to_string())?;
    let sparse = top_k_sparsify(&normalized, cfg.tau).map_err(|e| e.to_string())?;
    let mut memory = LayerMemory::new(cfg.window).map_err(|e| e.to_string())?;
    memory.push(sparse.clone()).map_err(|e| e.to_string())?;
    let aggregate = aggregate_weighted_mean(&memory, cfg.alpha).map_err(|e| e.to_string())?;
    let aligned =
        align_attention(&row, &aggregate, cfg.beta, span, renorm).map_err(|e| e.to_string())?;

    to_json(&PipelineView {
        mass_before: image_attention_mass(&row, span).map_err(|e| e.to_string())?,
        mass_after: image_attention_mass(&aligned, span).map_err(|e| e.to_string())?,
        row: row.weights,
        image_slice,
        normalized,
        sparse: sparse.values().to_vec(),
        aggregate,
        aligned: aligned.weights,
    })
}

fn decode_view(
    seed: u64,
    layout: &PromptLayout,
    cfg: Option<MdsamConfig>,
    steps: usize,
    min_prominence: f64,
) -> Result<RunView, String> {
    let params = build_model(seed, ModelDims::default()).map_err(|e| e.to_string())?;
    let mut session = DecodeSession::new(params, layout.clone(), cfg).map_err(|e| e.to_string())?;
    let (tokens, trace) = session.decode_greedy(steps).map_err(|e| e.to_string())?;
    let mass = trace.step_series();
    Ok(RunView {
        peaks: detect_peaks(&mass, min_prominence),
        tokens,
        mass,
    })
}

/// Greedy decode on the default toy model, with and without steering.
#[allow(clippy::too_many_arguments)]
pub fn compare_decode_json(
    seed: u64,
    prompt_seed: u64,
    image_tokens: usize,
    text_tokens: usize,
    steps: usize,
    preset: &str,
    beta: f64,
    min_prominence: f64,
) -> Result<String, String> {
    if steps == 0 || steps > 256 {
        return Err("steps must be between 1 and 256".into());
    }
    let cfg = MdsamConfig::preset(preset)
        .map_err(|e| e.to_string())?
        .with_beta(beta);
    cfg.validate().map_err(|e| e.to_string())?;
    let dims = ModelDims::default();
    let layout = PromptLayout::synthetic(
        image_tokens,
        text_tokens,
        prompt_seed,
        dims.d_model,
        dims.vocab_size,
    )
    .map_err(|e| e.to_string())?;
    let baseline = decode_view(seed, &layout, None, steps, min_prominence)?;
    let steered = decode_view(seed, &layout, Some(cfg), steps, min_prominence)?;
    let divergence_step = baseline
        .tokens
        .iter()
        .zip(&steered.tokens)
        .position(|(a, b)| a != b)
        .map(|i| i + 1);
    to_json(&CompareView {
        config: cfg,
        baseline,
        steered,
        divergence_step,
    })
}

pub fn peaks_json(series: &str, min_prominence: f64) -> Result<String, String> {
    if min_prominence.is_nan() || min_prominence < 0.0 {
        return Err("min prominence must be non-negative".into());
    }
    to_json(&detect_peaks(&parse_series(series)?, min_prominence))
}

#[wasm_bindgen]
pub fn layer_pipeline(
    row: &str,
    span_start: usize,
    span_end: usize,
    tau: f64,
    alpha: f64,
    beta: f64,
    renormalize: bool,
) -> Result<String, JsError> {
    layer_pipeline_json(row, span_start, span_end, tau, alpha, beta, renormalize)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn compare_decode(
    seed: u32,
    prompt_seed: u32,
    image_tokens: usize,
    text_tokens: usize,
    steps: usize,
    preset: &str,
    beta: f64,
    min_prominence: f64,
) -> Result<String, JsError> {
    compare_decode_json(
        seed.into(),
        prompt_seed.into(),
        image_tokens,
        text_tokens,
        steps,
        preset,
        beta,
        min_prominence,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn find_peaks(series: &str, min_prominence: f64) -> Result<String, JsError> {
    peaks_json(series, min_prominence).map_err(|e| JsError::new(&e))
}
