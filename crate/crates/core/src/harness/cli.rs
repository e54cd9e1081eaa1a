use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::engine::{MdsamConfig, RenormMode, ResetPolicy};
use crate::error::{MdsamError, Result};
use crate::harness::config::{parse_config, ConfigFile, RunSpec, SweepGrid};
use crate::harness::run::run_single;
use crate::harness::sweep::run_sweep_to_files;
use crate::trace::{
    compare_traces, detect_peaks, import_trace, DecodeTrace, DEFAULT_MIN_PROMINENCE,
};

#[derive(Debug, Parser)]
#[command(
    name = "mdsam",
    version,
    about = "Attention steering on a seeded toy decoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Greedy decode with or without steering; writes the trace.
    Decode(Box<DecodeArgs>),
    /// Run a hyperparameter grid and write the result table.
    Sweep(SweepArgs),
    /// Peak and delta report for one or two saved traces.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Run file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// llava, deepseekvl or minigpt4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_renorm)]
    renorm: Option<RenormMode>,
    #[arg(long, value_parser = parse_reset)]
    reset: Option<ResetPolicy>,
    /// Model seed.
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    /// Tokens to generate.
    #[arg(long, required_unless_present = "config")]
    steps: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    image_tokens: Option<usize>,
    #[arg(long)]
    text_tokens: Option<usize>,
    #[arg(long)]
    prompt_seed: Option<u64>,
    #[arg(long)]
    peak_prominence: Option<f64>,
    /// Trace output; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline trace output for steered runs.
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    /// Summary JSON output.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Grid file with a [sweep] section.
    #[arg(
        long,
        required_unless_present = "ablation",
        conflicts_with = "ablation"
    )]
    grid: Option<PathBuf>,
    /// Built-in ablation layout: eight (beta, tau) pairs plus the baseline.
    #[arg(long)]
    ablation: bool,
    #[arg(long, requires = "ablation")]
    seed: Option<u64>,
    #[arg(long, requires = "ablation")]
    steps: Option<usize>,
    /// CSV table output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aligned plain-text table output.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    treated: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_PROMINENCE)]
    min_prominence: f64,
}

fn parse_renorm(s: &str) -> std::result::Result<RenormMode, String> {
    s.parse().map_err(|e: MdsamError| e.to_string())
}

fn parse_reset(s: &str) -> std::result::Result<ResetPolicy, String> {
    s.parse().map_err(|e: MdsamError| e.to_string())
}

fn decode_spec(args: &DecodeArgs) -> Result<RunSpec> {
    let mut spec = match &args.config {
        Some(path) => match parse_config(path)? {
            ConfigFile::Run(spec) => spec,
            ConfigFile::Sweep(_) => {
                return Err(MdsamError::config(
                    "sweep",
                    format!(
                        "{} is a sweep grid; use `mdsam sweep --grid`",
                        path.display()
                    ),
                ))
            }
        },
        None => RunSpec::new(0, 1, None),
    };

    if let Some(seed) = args.seed {
        spec.model.seed = seed;
    }
    if let Some(steps) = args.steps {
        spec.steps = steps;
    }
    let dims = &mut spec.model.dims;
    dims.num_layers = args.layers.unwrap_or(dims.num_layers);
    dims.num_heads = args.heads.unwrap_or(dims.num_heads);
    dims.d_model = args.d_model.unwrap_or(dims.d_model);
    dims.vocab_size = args.vocab.unwrap_or(dims.vocab_size);
    let prompt = &mut spec.prompt;
    prompt.num_image_tokens = args.image_tokens.unwrap_or(prompt.num_image_tokens);
    prompt.num_text_tokens = args.text_tokens.unwrap_or(prompt.num_text_tokens);
    prompt.seed = args.prompt_seed.unwrap_or(prompt.seed);
    spec.peak_prominence = args.peak_prominence.unwrap_or(spec.peak_prominence);

    let mut cfg = match &args.preset {
        Some(name) => Some(MdsamConfig::preset(name)?),
        None => spec.mdsam,
    };
    if cfg.is_none() && (args.tau.is_some() || args.alpha.is_some() || args.beta.is_some()) {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| MdsamError::config(key, "required unless --preset is given"))
        };
        cfg = Some(MdsamConfig::new(
            need(args.tau, "tau")?,
            need(args.alpha, "alpha")?,
            need(args.beta, "beta")?,
        )?);
    }
    if let Some(c) = cfg.as_mut() {
        c.tau = args.tau.unwrap_or(c.tau);
        c.alpha = args.alpha.unwrap_or(c.alpha);
        c.beta = args.beta.unwrap_or(c.beta);
        c.window = args.window.unwrap_or(c.window);
        c.renorm = args.renorm.unwrap_or(c.renorm);
        c.reset = args.reset.unwrap_or(c.reset);
    }
    spec.mdsam = cfg;

    if args.out.is_some() {
        spec.output.trace = args.out.clone();
    }
    if args.baseline_out.is_some() {
        spec.output.baseline_trace = args.baseline_out.clone();
    }
    if args.summary.is_some() {
        spec.output.summary = args.summary.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn sweep_grid(args: &SweepArgs) -> Result<SweepGrid> {
    let mut grid = match &args.grid {
        Some(path) => match parse_config(path)? {
            ConfigFile::Sweep(grid) => grid,
            ConfigFile::Run(_) => {
                return Err(MdsamError::config(
                    "sweep",
                    format!("{} has no [sweep] section", path.display()),
                ))
            }
        },
        None => SweepGrid::ablation(RunSpec::new(
            args.seed.unwrap_or(42),
            args.steps.unwrap_or(24),
            None,
        )),
    };
    if args.out.is_some() {
        grid.base.output.table = args.out.clone();
    }
    if args.text.is_some() {
        grid.base.output.text_table = args.text.clone();
    }
    Ok(grid)
}

fn describe(
    out: &mut dyn Write,
    label: &str,
    path: &Path,
    trace: &DecodeTrace,
    min_prominence: f64,
) -> std::io::Result<()> {
    let peaks = detect_peaks(&trace.step_series(), min_prominence);
    writeln!(
        out,
        "{label}: {} ({} steps x {} layers, mean image mass {:.6})",
        path.display(),
        trace.num_steps(),
        trace.num_layers(),
        trace.mean_mass()
    )?;
    let listed: Vec<String> = peaks
        .indices
        .iter()
        .zip(&peaks.prominences)
        .map(|(i, p)| format!("step {} (prominence {p:.6})", i + 1))
        .collect();
    writeln!(
        out,
        "  peaks >= {min_prominence}: {}",
        if listed.is_empty() {
            "none".to_string()
        } else {
            listed.join(", ")
        }
    )
}

fn analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| MdsamError::io("<stdout>", e);
    let baseline = import_trace(&args.baseline)?;
    describe(
        out,
        "baseline",
        &args.baseline,
        &baseline,
        args.min_prominence,
    )
    .map_err(io)?;
    let Some(treated_path) = &args.treated else {
        return Ok(());
    };
    let treated = import_trace(treated_path)?;
    describe(out, "treated", treated_path, &treated, args.min_prominence).map_err(io)?;

    let cmp = compare_traces(&baseline, &treated)?;
    writeln!(out, "step,baseline_mass,treated_mass,delta").map_err(io)?;
    for (i, ((b, t), d)) in baseline
        .step_series()
        .iter()
        .zip(treated.step_series())
        .zip(&cmp.deltas)
        .enumerate()
    {
        writeln!(out, "{},{b},{t},{d}", i + 1).map_err(io)?;
    }
    writeln!(
        out,
        "mean delta {}, increased on {} of {} steps",
        cmp.mean_delta,
        cmp.increased_steps,
        cmp.deltas.len()
    )
    .map_err(io)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| MdsamError::io("<stdout>", e);
    match cli.command {
        Command::Decode(args) => {
            let spec = decode_spec(&args)?;
            let summary = run_single(&spec)?;
            let tokens: Vec<String> = summary.tokens.iter().map(u32::to_string).collect();
            writeln!(out, "tokens: {}", tokens.join(" ")).map_err(io)?;
            writeln!(out, "mean image mass: {:.6}", summary.mean_mass).map_err(io)?;
            writeln!(out, "peaks: {}", summary.peak_count).map_err(io)?;
            if let Some(cmp) = &summary.baseline {
                writeln!(out, "mass delta vs baseline: {:+.6}", cmp.mass_delta).map_err(io)?;
                let div = cmp
                    .divergence_step
                    .map_or("none".to_string(), |s| s.to_string());
                writeln!(out, "divergence step: {div}").map_err(io)?;
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let grid = sweep_grid(&args)?;
            let table = run_sweep_to_files(&grid)?;
            write!(out, "{}", table.to_text()).map_err(io)
        }
        Command::Analyze(args) => analyze(&args, out),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
///
/// Returns 0 on success, 2 on usage errors and 1 on any other failure.
pub fn cli_main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
