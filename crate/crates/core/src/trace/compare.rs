use serde::{Deserialize, Serialize};

use crate::error::{MdsamError, Result};
use crate::trace::DecodeTrace;

/// Per-step difference of layer-mean image mass, treated minus baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    /// Steps where the treated mass is strictly higher.
    pub increased_steps: usize,
}

pub fn compare_traces(baseline: &DecodeTrace, treated: &DecodeTrace) -> Result<TraceComparison> {
    let shape = |t: &DecodeTrace| (t.num_steps(), t.num_layers());
    if shape(baseline) != shape(treated) {
        let (bs, bl) = shape(baseline);
        let (ts, tl) = shape(treated);
        return Err(MdsamError::Comparison(format!(
            "baseline has {bs} steps x {bl} layers, treated has {ts} steps x {tl} layers"
        )));
    }
    let deltas: Vec<f64> = treated
        .step_series()
        .iter()
        .zip(baseline.step_series())
        .map(|(t, b)| t - b)
        .collect();
    let mean_delta = if deltas.is_empty() {
        0.0
    } else {
        deltas.iter().sum::<f64>() / deltas.len() as f64
    };
    let increased_steps = deltas.iter().filter(|d| **d > 0.0).count();
    Ok(TraceComparison {
        deltas,
        mean_delta,
        increased_steps,
    })
}
