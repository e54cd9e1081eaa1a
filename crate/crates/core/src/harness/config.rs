//! TOML run and sweep files.
//!
//! ```toml
//! [model]              # seed required; dims default to 4 layers, 2 heads, d_model 16, vocab 64
//! seed = 42
//!
//! [prompt]             # defaults: 16 image tokens, 8 text tokens, seed 0
//! num_image_tokens = 16
//! num_text_tokens = 8
//! seed = 7
//!
//! [decode]
//! steps = 24           # required
//! peak_prominence = 0.02
//!
//! [mdsam]              # omit for a baseline run
//! preset = "llava"     # or explicit tau/alpha/beta; explicit keys override the preset
//! window = 8
//! renorm = "row_renormalize"   # or "verbatim"
//! reset = "persistent"         # or "per_token"
//!
//! [output]
//! trace = "trace.csv"
//! baseline_trace = "baseline.csv"
//! summary = "summary.json"
//! table = "table.csv"          # sweeps
//! text_table = "table.txt"     # sweeps
//!
//! [sweep]              # its presence turns the file into a sweep grid
//! beta = [0.5, 1.0]
//! tau = [0.2, 1.0]
//! # or explicit (beta, tau) pairs instead of the beta x tau product:
//! # beta_tau = [[0.5, 0.2], [2.0, 1.0]]
//! alpha = [0.9]
//! window = [8]
//! reset = ["persistent"]
//! renorm = ["row_renormalize"]
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::ModelDims;
use crate::engine::{MdsamConfig, RenormMode, ResetPolicy, DEFAULT_WINDOW};
use crate::error::{MdsamError, Result};
use crate::trace::DEFAULT_MIN_PROMINENCE;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub seed: u64,
    pub dims: ModelDims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSpec {
    pub num_image_tokens: usize,
    pub num_text_tokens: usize,
    pub seed: u64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            num_image_tokens: 16,
            num_text_tokens: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    pub baseline_trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub text_table: Option<PathBuf>,
}

/// A fully validated single run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub prompt: PromptSpec,
    pub steps: usize,
    pub peak_prominence: f64,
    /// `None` runs the baseline only.
    pub mdsam: Option<MdsamConfig>,
    pub output: OutputSpec,
}

impl RunSpec {
    pub fn new(seed: u64, steps: usize, mdsam: Option<MdsamConfig>) -> Self {
        Self {
            model: ModelSpec {
                seed,
                dims: ModelDims::default(),
            },
            prompt: PromptSpec::default(),
            steps,
            peak_prominence: DEFAULT_MIN_PROMINENCE,
            mdsam,
            output: OutputSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let keyed = |prefix: &'static str| {
            move |e: MdsamError| match e {
                MdsamError::Config { key, message } => MdsamError::Config {
                    key: format!("{prefix}.{key}"),
                    message,
                },
                other => other,
            }
        };
        self.model.dims.validate().map_err(keyed("model"))?;
        if self.prompt.num_image_tokens == 0 {
            return Err(MdsamError::config(
                "prompt.num_image_tokens",
                "must be at least 1",
            ));
        }
        if self.steps == 0 {
            return Err(MdsamError::config("decode.steps", "must be at least 1"));
        }
        if !(self.peak_prominence >= 0.0 && self.peak_prominence.is_finite()) {
            return Err(MdsamError::config(
                "decode.peak_prominence",
                "must be finite and >= 0",
            ));
        }
        if let Some(cfg) = &self.mdsam {
            cfg.validate().map_err(keyed("mdsam"))?;
        }
        Ok(())
    }

    /// Canonical TOML with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(&RawFile::from_run(self, None)).expect("spec serializes")
    }
}

/// Cartesian grid of steering configs sharing one base run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub base: RunSpec,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    /// When set, replaces the `beta x tau` product.
    pub beta_tau: Option<Vec<(f64, f64)>>,
    pub alpha: Vec<f64>,
    pub window: Vec<usize>,
    pub reset: Vec<ResetPolicy>,
    pub renorm: Vec<RenormMode>,
}

/// The eight `(beta, tau)` cells of the ablation layout.
pub const ABLATION_BETA_TAU: [(f64, f64); 8] = [
    (0.5, 0.2),
    (0.5, 0.4),
    (0.5, 0.6),
    (0.5, 0.8),
    (0.5, 1.0),
    (1.0, 1.0),
    (1.5, 1.0),
    (2.0, 1.0),
];

impl SweepGrid {
    /// Single-cell grid equivalent to `base` with `cfg`.
    pub fn single(base: RunSpec, cfg: MdsamConfig) -> Self {
        Self {
            base,
            beta: vec![cfg.beta],
            tau: vec![cfg.tau],
            beta_tau: None,
            alpha: vec![cfg.alpha],
            window: vec![cfg.window],
            reset: vec![cfg.reset],
            renorm: vec![cfg.renorm],
        }
    }

    /// Ablation layout: eight `(beta, tau)` pairs at alpha 0.9, L = 8.
    pub fn ablation(base: RunSpec) -> Self {
        Self {
            base,
            beta: Vec::new(),
            tau: Vec::new(),
            beta_tau: Some(ABLATION_BETA_TAU.to_vec()),
            alpha: vec![0.9],
            window: vec![DEFAULT_WINDOW],
            reset: vec![ResetPolicy::Persistent],
            renorm: vec![RenormMode::RowRenormalize],
        }
    }

    fn pairs(&self) -> Vec<(f64, f64)> {
        match &self.beta_tau {
            Some(pairs) => pairs.clone(),
            None => self
                .beta
                .iter()
                .flat_map(|&b| self.tau.iter().map(move |&t| (b, t)))
                .collect(),
        }
    }

    /// Number of cells: product of the list lengths.
    pub fn len(&self) -> usize {
        self.pairs().len()
            * self.alpha.len()
            * self.window.len()
            * self.reset.len()
            * self.renorm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cell, ordered by `(beta, tau, alpha, window, reset, renorm)`.
    pub fn cells(&self) -> Vec<MdsamConfig> {
        let mut cells = Vec::with_capacity(self.len());
        for (beta, tau) in self.pairs() {
            for &alpha in &self.alpha {
                for &window in &self.window {
                    for &reset in &self.reset {
                        for &renorm in &self.renorm {
                            cells.push(MdsamConfig {
                                tau,
                                alpha,
                                beta,
                                window,
                                renorm,
                                reset,
                            });
                        }
                    }
                }
            }
        }
        cells.sort_by(|a, b| {
            a.beta
                .total_cmp(&b.beta)
                .then(a.tau.total_cmp(&b.tau))
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.window.cmp(&b.window))
                .then(a.reset.cmp(&b.reset))
                .then(a.renorm.cmp(&b.renorm))
        });
        cells
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let nonempty = |key: &str, len: usize| {
            if len == 0 {
                Err(MdsamError::config(
                    format!("sweep.{key}"),
                    "list must not be empty",
                ))
            } else {
                Ok(())
            }
        };
        if let Some(pairs) = &self.beta_tau {
            nonempty("beta_tau", pairs.len())?;
            if !self.beta.is_empty() || !self.tau.is_empty() {
                return Err(MdsamError::config(
                    "sweep.beta_tau",
                    "cannot be combined with `beta` or `tau` lists",
                ));
            }
        } else {
            nonempty("beta", self.beta.len())?;
            nonempty("tau", self.tau.len())?;
        }
        nonempty("alpha", self.alpha.len())?;
        nonempty("window", self.window.len())?;
        nonempty("reset", self.reset.len())?;
        nonempty("renorm", self.renorm.len())?;
        for cell in self.cells() {
            cell.validate().map_err(|e| match e {
                MdsamError::Config { key, message } => MdsamError::Config {
                    key: format!("sweep.{key}"),
                    message,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&RawFile::from_run(&self.base, Some(self))).expect("grid serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigFile {
    Run(RunSpec),
    Sweep(SweepGrid),
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<RawModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<RawPrompt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decode: Option<RawDecode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mdsam: Option<RawMdsam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<RawSweep>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    seed: Option<u64>,
    num_layers: Option<usize>,
    num_heads: Option<usize>,
    d_model: Option<usize>,
    vocab_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPrompt {
    num_image_tokens: Option<usize>,
    num_text_tokens: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDecode {
    steps: Option<usize>,
    peak_prominence: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMdsam {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    tau: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    window: Option<usize>,
    renorm: Option<RenormMode>,
    reset: Option<ResetPolicy>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text_table: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_tau: Option<Vec<(f64, f64)>>,
    alpha: Option<Vec<f64>>,
    window: Option<Vec<usize>>,
    reset: Option<Vec<ResetPolicy>>,
    renorm: Option<Vec<RenormMode>>,
}

fn missing(key: &str) -> MdsamError {
    MdsamError::config(key, "missing required key")
}

impl RawMdsam {
    fn resolve(self) -> Result<MdsamConfig> {
        let base = self
            .preset
            .as_deref()
            .map(MdsamConfig::preset)
            .transpose()?;
        let pick = |value: Option<f64>, from_preset: Option<f64>, key: &str| {
            value
                .or(from_preset)
                .ok_or_else(|| missing(&format!("mdsam.{key}")))
        };
        Ok(MdsamConfig {
            tau: pick(self.tau, base.map(|b| b.tau), "tau")?,
            alpha: pick(self.alpha, base.map(|b| b.alpha), "alpha")?,
            beta: pick(self.beta, base.map(|b| b.beta), "beta")?,
            window: self.window.unwrap_or(DEFAULT_WINDOW),
            renorm: self.renorm.unwrap_or_default(),
            reset: self.reset.unwrap_or_default(),
        })
    }
}

impl RawFile {
    fn resolve(self) -> Result<ConfigFile> {
        let model = self.model.unwrap_or_default();
        let prompt = self.prompt.unwrap_or_default();
        let decode = self.decode.unwrap_or_default();
        let output = self.output.unwrap_or_default();
        let defaults = ModelDims::default();
        let default_prompt = PromptSpec::default();

        let base = RunSpec {
            model: ModelSpec {
                seed: model.seed.ok_or_else(|| missing("model.seed"))?,
                dims: ModelDims {
                    num_layers: model.num_layers.unwrap_or(defaults.num_layers),
                    num_heads: model.num_heads.unwrap_or(defaults.num_heads),
                    d_model: model.d_model.unwrap_or(defaults.d_model),
                    vocab_size: model.vocab_size.unwrap_or(defaults.vocab_size),
                },
            },
            prompt: PromptSpec {
                num_image_tokens: prompt
                    .num_image_tokens
                    .unwrap_or(default_prompt.num_image_tokens),
                num_text_tokens: prompt
                    .num_text_tokens
                    .unwrap_or(default_prompt.num_text_tokens),
                seed: prompt.seed.unwrap_or(default_prompt.seed),
            },
            steps: decode.steps.ok_or_else(|| missing("decode.steps"))?,
            peak_prominence: decode.peak_prominence.unwrap_or(DEFAULT_MIN_PROMINENCE),
            mdsam: self.mdsam.map(RawMdsam::resolve).transpose()?,
            output: OutputSpec {
                trace: output.trace,
                baseline_trace: output.baseline_trace,
                summary: output.summary,
                table: output.table,
                text_table: output.text_table,
            },
        };

        let Some(sweep) = self.sweep else {
            base.validate()?;
            return Ok(ConfigFile::Run(base));
        };

        let fallback = base.mdsam;
        let (beta, tau) = if sweep.beta_tau.is_some() {
            (
                sweep.beta.unwrap_or_default(),
                sweep.tau.unwrap_or_default(),
            )
        } else {
            (
                sweep
                    .beta
                    .or_else(|| fallback.map(|c| vec![c.beta]))
                    .ok_or_else(|| missing("sweep.beta"))?,
                sweep
                    .tau
                    .or_else(|| fallback.map(|c| vec![c.tau]))
                    .ok_or_else(|| missing("sweep.tau"))?,
            )
        };
        let grid = SweepGrid {
            beta,
            tau,
            beta_tau: sweep.beta_tau,
            alpha: sweep
                .alpha
                .unwrap_or_else(|| vec![fallback.map_or(0.9, |c| c.alpha)]),
            window: sweep
                .window
                .unwrap_or_else(|| vec![fallback.map_or(DEFAULT_WINDOW, |c| c.window)]),
            reset: sweep
                .reset
                .unwrap_or_else(|| vec![fallback.map(|c| c.reset).unwrap_or_default()]),
            renorm: sweep
                .renorm
                .unwrap_or_else(|| vec![fallback.map(|c| c.renorm).unwrap_or_default()]),
            base,
        };
        grid.validate()?;
        Ok(ConfigFile::Sweep(grid))
    }

    fn from_run(spec: &RunSpec, grid: Option<&SweepGrid>) -> Self {
        let dims = spec.model.dims;
        Self {
            model: Some(RawModel {
                seed: Some(spec.model.seed),
                num_layers: Some(dims.num_layers),
                num_heads: Some(dims.num_heads),
                d_model: Some(dims.d_model),
                vocab_size: Some(dims.vocab_size),
            }),
            prompt: Some(RawPrompt {
                num_image_tokens: Some(spec.prompt.num_image_tokens),
                num_text_tokens: Some(spec.prompt.num_text_tokens),
                seed: Some(spec.prompt.seed),
            }),
            decode: Some(RawDecode {
                steps: Some(spec.steps),
                peak_prominence: Some(spec.peak_prominence),
            }),
            mdsam: spec.mdsam.map(|c| RawMdsam {
                preset: None,
                tau: Some(c.tau),
                alpha: Some(c.alpha),
                beta: Some(c.beta),
                window: Some(c.window),
                renorm: Some(c.renorm),
                reset: Some(c.reset),
            }),
            output: Some(RawOutput {
                trace: spec.output.trace.clone(),
                baseline_trace: spec.output.baseline_trace.clone(),
                summary: spec.output.summary.clone(),
                table: spec.output.table.clone(),
                text_table: spec.output.text_table.clone(),
            }),
            sweep: grid.map(|g| RawSweep {
                beta: g.beta_tau.is_none().then(|| g.beta.clone()),
                tau: g.beta_tau.is_none().then(|| g.tau.clone()),
                beta_tau: g.beta_tau.clone(),
                alpha: Some(g.alpha.clone()),
                window: Some(g.window.clone()),
                reset: Some(g.reset.clone()),
                renorm: Some(g.renorm.clone()),
            }),
        }
    }
}

fn syntax_error(text: &str, err: toml::de::Error) -> MdsamError {
    let (line, field) = match err.span() {
        Some(span) => {
            let line = text[..span.start].matches('\n').count() as u64 + 1;
            let snippet: String = text[span].chars().take(40).collect();
            (line, snippet.trim().to_string())
        }
        None => (0, "?".to_string()),
    };
    MdsamError::Parse {
        line,
        field,
        message: err.message().to_string(),
    }
}

/// Parses and validates a run or sweep file held in memory.
pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let raw: RawFile = toml::from_str(text).map_err(|e| syntax_error(text, e))?;
    raw.resolve()
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| MdsamError::io(path, e))?;
    parse_config_str(&text)
}
