use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{build_model, DecodeSession, PromptLayout};
use crate::engine::MdsamConfig;
use crate::error::{MdsamError, Result};
use crate::harness::config::RunSpec;
use crate::trace::{compare_traces, detect_peaks, export_trace, DecodeTrace, TraceFormat};

/// How a steered run departs from its baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub tokens: Vec<u32>,
    pub mean_mass: f64,
    /// Steered mean mass minus baseline mean mass.
    pub mass_delta: f64,
    /// 1-based step of the first differing token, if any.
    pub divergence_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: Option<MdsamConfig>,
    pub tokens: Vec<u32>,
    pub mean_mass: f64,
    pub peak_count: usize,
    pub peak_steps: Vec<usize>,
    /// Present for steered runs.
    pub baseline: Option<BaselineComparison>,
}

/// Traces and summary of one run, before anything is written.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub trace: DecodeTrace,
    pub baseline_trace: Option<DecodeTrace>,
    pub summary: RunSummary,
}

/// Decodes `spec.steps` tokens with `cfg` (or the baseline when `None`).
pub fn decode_trace(spec: &RunSpec, cfg: Option<MdsamConfig>) -> Result<DecodeTrace> {
    let params = build_model(spec.model.seed, spec.model.dims)?;
    let layout = PromptLayout::synthetic(
        spec.prompt.num_image_tokens,
        spec.prompt.num_text_tokens,
        spec.prompt.seed,
        spec.model.dims.d_model,
        spec.model.dims.vocab_size,
    )?;
    let mut session = DecodeSession::new(params, layout, cfg)?;
    let (_, trace) = session.decode_greedy(spec.steps)?;
    Ok(trace)
}

pub fn first_divergence(a: &[u32], b: &[u32]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .map(|i| i + 1)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len()) + 1))
}

/// Summary of `treated` against an already decoded `baseline`.
pub fn summarize(
    cfg: Option<MdsamConfig>,
    treated: &DecodeTrace,
    baseline: Option<&DecodeTrace>,
    min_prominence: f64,
) -> Result<RunSummary> {
    let peaks = detect_peaks(&treated.step_series(), min_prominence);
    let tokens = treated.tokens();
    let baseline = baseline
        .map(|b| -> Result<BaselineComparison> {
            compare_traces(b, treated)?;
            let base_tokens = b.tokens();
            Ok(BaselineComparison {
                divergence_step: first_divergence(&base_tokens, &tokens),
                mean_mass: b.mean_mass(),
                mass_delta: treated.mean_mass() - b.mean_mass(),
                tokens: base_tokens,
            })
        })
        .transpose()?;
    Ok(RunSummary {
        config: cfg,
        mean_mass: treated.mean_mass(),
        peak_count: peaks.count(),
        peak_steps: peaks.indices.iter().map(|i| i + 1).collect(),
        tokens,
        baseline,
    })
}

/// Runs the decode(s) for `spec` in memory. Steered specs also decode the
/// baseline for comparison.
pub fn execute(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let baseline = decode_trace(spec, None)?;
    match spec.mdsam {
        None => Ok(RunOutcome {
            summary: summarize(None, &baseline, None, spec.peak_prominence)?,
            trace: baseline,
            baseline_trace: None,
        }),
        Some(cfg) => {
            let treated = decode_trace(spec, Some(cfg))?;
            Ok(RunOutcome {
                summary: summarize(Some(cfg), &treated, Some(&baseline), spec.peak_prominence)?,
                trace: treated,
                baseline_trace: Some(baseline),
            })
        }
    }
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MdsamError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| MdsamError::io(path, e))
}

fn write_trace(trace: &DecodeTrace, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MdsamError::io(dir, e))?;
    }
    export_trace(trace, path, TraceFormat::from_path(path))
}

/// Executes `spec` and writes whichever outputs it names.
pub fn run_single(spec: &RunSpec) -> Result<RunSummary> {
    let outcome = execute(spec)?;
    if let Some(path) = &spec.output.trace {
        write_trace(&outcome.trace, path)?;
    }
    if let (Some(path), Some(trace)) = (&spec.output.baseline_trace, &outcome.baseline_trace) {
        write_trace(trace, path)?;
    }
    if let Some(path) = &spec.output.summary {
        let json = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
        write_text(path, &(json + "\n"))?;
    }
    Ok(outcome.summary)
}
