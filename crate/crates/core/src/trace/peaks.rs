use serde::{Deserialize, Serialize};

/// Prominence a peak needs to be reported when no threshold is given.
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    /// 0-based positions in `series`, ascending.
    pub indices: Vec<usize>,
    pub prominences: Vec<f64>,
    pub series: Vec<f64>,
    pub min_prominence: f64,
}

impl PeakReport {
    pub fn count(&self) -> usize {
        self.indices.len()
    }
}

/// Height of the strict local maximum at `i` above the higher of its two
/// bases. Each base is the minimum between `i` and the nearest strictly
/// higher sample on that side, or the series end.
fn prominence(series: &[f64], i: usize) -> f64 {
    let peak = series[i];
    let left_base = series[..i]
        .iter()
        .rev()
        .take_while(|&&x| x <= peak)
        .fold(peak, |m, &x| m.min(x));
    let right_base = series[i + 1..]
        .iter()
        .take_while(|&&x| x <= peak)
        .fold(peak, |m, &x| m.min(x));
    peak - left_base.max(right_base)
}

/// Strict local maxima whose prominence reaches `min_prominence`. Plateaus
/// and endpoints are never peaks.
pub fn detect_peaks(series: &[f64], min_prominence: f64) -> PeakReport {
    let mut indices = Vec::new();
    let mut prominences = Vec::new();
    for i in 1..series.len().saturating_sub(1) {
        if series[i] > series[i - 1] && series[i] > series[i + 1] {
            let p = prominence(series, i);
            if p >= min_prominence {
                indices.push(i);
                prominences.push(p);
            }
        }
    }
    PeakReport {
        indices,
        prominences,
        series: series.to_vec(),
        min_prominence,
    }
}
