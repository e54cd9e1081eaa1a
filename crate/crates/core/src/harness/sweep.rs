use rayon::prelude::*;

use crate::engine::MdsamConfig;
use crate::error::{MdsamError, Result};
use crate::harness::config::SweepGrid;
use crate::harness::run::{decode_trace, summarize, write_text};

pub const SWEEP_HEADER: [&str; 10] = [
    "beta",
    "tau",
    "alpha",
    "window",
    "reset",
    "renorm",
    "mean_mass",
    "mass_delta",
    "peaks",
    "divergence_step",
];

/// Label written in the hyperparameter columns of the baseline row.
pub const BASELINE_LABEL: &str = "baseline";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// `None` marks the baseline row.
    pub config: Option<MdsamConfig>,
    pub mean_mass: f64,
    pub mass_delta: f64,
    pub peaks: usize,
    pub divergence_step: Option<usize>,
}

impl SweepRow {
    fn fields(&self) -> Vec<String> {
        let mut out = match &self.config {
            Some(c) => vec![
                c.beta.to_string(),
                c.tau.to_string(),
                c.alpha.to_string(),
                c.window.to_string(),
                c.reset.to_string(),
                c.renorm.to_string(),
            ],
            None => std::iter::once(BASELINE_LABEL.to_string())
                .chain(std::iter::repeat_n("-".to_string(), 5))
                .collect(),
        };
        out.push(self.mean_mass.to_string());
        out.push(self.mass_delta.to_string());
        out.push(self.peaks.to_string());
        out.push(
            self.divergence_step
                .map_or_else(|| "none".into(), |s| s.to_string()),
        );
        out
    }
}

/// Baseline row first, then one row per grid cell in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SWEEP_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.fields()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Right-aligned plain-text rendering with reals at six decimals.
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut f = r.fields();
                f[6] = format!("{:.6}", r.mean_mass);
                f[7] = format!("{:+.6}", r.mass_delta);
                f
            })
            .collect();
        let widths: Vec<usize> = (0..SWEEP_HEADER.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].len())
                    .chain(std::iter::once(SWEEP_HEADER[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

fn cell_label(c: &MdsamConfig) -> String {
    format!(
        "beta={}, tau={}, alpha={}, window={}, reset={}, renorm={}",
        c.beta, c.tau, c.alpha, c.window, c.reset, c.renorm
    )
}

/// Runs the baseline once and every cell independently (in parallel); rows
/// come back in grid order regardless of completion order.
pub fn run_sweep(grid: &SweepGrid) -> Result<SweepTable> {
    grid.validate()?;
    let base = &grid.base;
    let baseline = decode_trace(base, None)?;
    let baseline_summary = summarize(None, &baseline, None, base.peak_prominence)?;

    let cells: Vec<SweepRow> = grid
        .cells()
        .par_iter()
        .map(|cfg| {
            let treated = decode_trace(base, Some(*cfg))?;
            let s = summarize(Some(*cfg), &treated, Some(&baseline), base.peak_prominence)?;
            let cmp = s.baseline.expect("steered summaries carry a comparison");
            Ok(SweepRow {
                config: Some(*cfg),
                mean_mass: s.mean_mass,
                mass_delta: cmp.mass_delta,
                peaks: s.peak_count,
                divergence_step: cmp.divergence_step,
            })
        })
        .collect::<Vec<Result<SweepRow>>>()
        .into_iter()
        .zip(grid.cells())
        .map(|(r, cfg)| {
            r.map_err(|e| MdsamError::Cell {
                cell: cell_label(&cfg),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len() + 1);
    rows.push(SweepRow {
        config: None,
        mean_mass: baseline_summary.mean_mass,
        mass_delta: 0.0,
        peaks: baseline_summary.peak_count,
        divergence_step: None,
    });
    rows.extend(cells);
    Ok(SweepTable { rows })
}

/// Runs the sweep and writes the CSV and text tables named in the grid's
/// output section.
pub fn run_sweep_to_files(grid: &SweepGrid) -> Result<SweepTable> {
    let table = run_sweep(grid)?;
    if let Some(path) = &grid.base.output.table {
        write_text(path, &table.to_csv())?;
    }
    if let Some(path) = &grid.base.output.text_table {
        write_text(path, &table.to_text())?;
    }
    Ok(table)
}
