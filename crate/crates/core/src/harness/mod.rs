//! Configuration files, single runs, hyperparameter sweeps and the `mdsam`
//! command line.

mod cli;
mod config;
mod run;
mod sweep;

pub use cli::{cli_main, cli_main_with};
pub use config::{
    parse_config, parse_config_str, ConfigFile, ModelSpec, OutputSpec, PromptSpec, RunSpec,
    SweepGrid, ABLATION_BETA_TAU,
};
pub use run::{
    decode_trace, execute, first_divergence, run_single, summarize, BaselineComparison, RunOutcome,
    RunSummary,
};
pub use sweep::{
    run_sweep, run_sweep_to_files, SweepRow, SweepTable, BASELINE_LABEL, SWEEP_HEADER,
};
