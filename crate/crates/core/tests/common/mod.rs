//! Brute-force reference implementations used only by tests. None of these
//! call into the library's pipeline code.

#![allow(dead_code)]

use mdsam::{MdsamConfig, RenormMode};
use rand::Rng;

pub const SLACK: f64 = 1e-9;

pub fn normalize_oracle(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi - lo < 1e-12 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Largest integer not above `tau * n` (up to slack), at least 1, at most n.
pub fn budget_oracle(tau: f64, n: usize) -> usize {
    let mut k = 0;
    while k < n && (k + 1) as f64 <= tau * n as f64 + SLACK {
        k += 1;
    }
    k.max(1)
}

/// Keeps position i iff fewer than k positions outrank it, where j outranks
/// i when it is larger, or equal and earlier.
pub fn top_k_oracle(v: &[f64], tau: f64) -> Vec<f64> {
    let k = budget_oracle(tau, v.len());
    (0..v.len())
        .map(|i| {
            let rank = (0..v.len())
                .filter(|&j| v[j] > v[i] || (v[j] == v[i] && j < i))
                .count();
            if rank < k {
                v[i]
            } else {
                0.0
            }
        })
        .collect()
}

/// `sum alpha^i e_i / sum alpha^i`, `entries[0]` most recent (i = 1).
pub fn aggregate_oracle(entries: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let n = entries[0].len();
    let mut num = vec![0.0; n];
    let mut den = 0.0;
    for (idx, e) in entries.iter().enumerate() {
        let w = alpha.powi(idx as i32 + 1);
        den += w;
        for j in 0..n {
            num[j] += w * e[j];
        }
    }
    num.iter().map(|x| x / den).collect()
}

pub fn align_oracle(
    row: &[f64],
    agg: &[f64],
    beta: f64,
    start: usize,
    renorm: RenormMode,
) -> Vec<f64> {
    let mut out = row.to_vec();
    for (j, a) in agg.iter().enumerate() {
        out[start + j] = (row[start + j] + beta * a) / (1.0 + beta);
    }
    if renorm == RenormMode::RowRenormalize && beta != 0.0 {
        let total: f64 = out.iter().sum();
        out = out.iter().map(|x| x / total).collect();
    }
    out
}

/// Whole layer step: returns the new per-head rows and the new memory
/// (most recent first).
pub fn pipeline_oracle(
    heads: &[Vec<f64>],
    memory: &[Vec<f64>],
    cfg: &MdsamConfig,
    start: usize,
    end: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = heads[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|j| heads.iter().map(|h| h[j]).sum::<f64>() / heads.len() as f64)
        .collect();
    let slice = &mean[start..=end];
    let sparse = top_k_oracle(&normalize_oracle(slice), cfg.tau);
    let mut new_memory = vec![sparse];
    new_memory.extend(memory.iter().take(cfg.window - 1).cloned());
    let agg = aggregate_oracle(&new_memory, cfg.alpha);
    let rows = heads
        .iter()
        .map(|h| align_oracle(h, &agg, cfg.beta, start, cfg.renorm))
        .collect();
    (rows, new_memory)
}

/// Checks every index of `series` against the peak predicate directly.
pub fn peaks_oracle(series: &[f64], min_prominence: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..series.len().saturating_sub(1) {
        if !(series[i] > series[i - 1] && series[i] > series[i + 1]) {
            continue;
        }
        let mut left_min = series[i];
        let mut j = i;
        while j > 0 {
            j -= 1;
            if series[j] > series[i] {
                break;
            }
            left_min = left_min.min(series[j]);
        }
        let mut right_min = series[i];
        for &x in &series[i + 1..] {
            if x > series[i] {
                break;
            }
            right_min = right_min.min(x);
        }
        if series[i] - left_min.max(right_min) >= min_prominence {
            out.push(i);
        }
    }
    out
}

pub fn random_stochastic(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
    let total: f64 = raw.iter().sum::<f64>().max(1e-300);
    raw.iter().map(|x| x / total).collect()
}

pub fn random_unit_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // sprinkle exact zeros and ties
            match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 0.5,
                _ => rng.gen_range(0.0..=1.0),
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
