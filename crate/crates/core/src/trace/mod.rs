//! Per-step image-attention instrumentation: mass series, peak detection,
//! baseline-vs-steered comparison and CSV/JSON persistence.

mod compare;
mod io;
mod peaks;

pub use compare::{compare_traces, TraceComparison};
pub use io::{
    export_trace, import_trace, read_csv, read_json, write_csv, write_json, TraceFormat, CSV_HEADER,
};
pub use peaks::{detect_peaks, PeakReport, DEFAULT_MIN_PROMINENCE};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionRow, TokenSpan};
use crate::decoder::ModelDims;
use crate::engine::MdsamConfig;
use crate::error::{MdsamError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub layer: u32,
    pub image_mass: f64,
    pub token_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub seed: u64,
    pub prompt_seed: u64,
    pub dims: ModelDims,
    pub num_image_tokens: usize,
    pub num_text_tokens: usize,
    /// `None` for baseline runs.
    pub config: Option<MdsamConfig>,
}

/// Records ordered by `(step, layer)`, both 1-based and contiguous.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub metadata: Option<TraceMetadata>,
    pub records: Vec<TraceRecord>,
}

/// Fraction of the row's total weight that falls inside `span`; 0 for an
/// all-zero row.
pub fn image_attention_mass(row: &AttentionRow, span: TokenSpan) -> Result<f64> {
    span.check_within(row.len())?;
    let total = row.sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = row.weights[span.range()].iter().sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

impl DecodeTrace {
    pub fn new(metadata: Option<TraceMetadata>) -> Self {
        Self {
            metadata,
            records: Vec::new(),
        }
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Result<Self> {
        let trace = Self {
            metadata: None,
            records,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Layers per step, taken from the first step.
    pub fn num_layers(&self) -> usize {
        self.records.iter().take_while(|r| r.step == 1).count()
    }

    pub fn num_steps(&self) -> usize {
        self.records.last().map_or(0, |r| r.step as usize)
    }

    /// Checks ordering, contiguity, mass bounds and per-step token agreement.
    pub fn validate(&self) -> Result<()> {
        let layers = self.num_layers();
        if self.records.is_empty() {
            return Ok(());
        }
        if layers == 0 {
            return Err(MdsamError::Schema("trace does not start at step 1".into()));
        }
        if !self.records.len().is_multiple_of(layers) {
            return Err(MdsamError::Schema(format!(
                "{} records do not divide into steps of {layers} layers",
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            let step = (i / layers) as u32 + 1;
            let layer = (i % layers) as u32 + 1;
            if r.step != step || r.layer != layer {
                return Err(MdsamError::Schema(format!(
                    "record {} is (step {}, layer {}), expected (step {step}, layer {layer})",
                    i + 1,
                    r.step,
                    r.layer
                )));
            }
            if !(0.0..=1.0).contains(&r.image_mass) {
                return Err(MdsamError::Schema(format!(
                    "record {} has image_mass {} outside [0, 1]",
                    i + 1,
                    r.image_mass
                )));
            }
            if layer > 1 && self.records[i - 1].token_id != r.token_id {
                return Err(MdsamError::Schema(format!(
                    "step {step} carries more than one token_id"
                )));
            }
        }
        Ok(())
    }

    /// Token emitted at each step.
    pub fn tokens(&self) -> Vec<u32> {
        self.records
            .iter()
            .filter(|r| r.layer == 1)
            .map(|r| r.token_id)
            .collect()
    }

    /// Mean image mass over layers, one value per step.
    pub fn step_series(&self) -> Vec<f64> {
        let layers = self.num_layers();
        if layers == 0 {
            return Vec::new();
        }
        self.records
            .chunks(layers)
            .map(|c| c.iter().map(|r| r.image_mass).sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Image mass at one (1-based) layer across steps.
    pub fn layer_series(&self, layer: u32) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.image_mass)
            .collect()
    }

    /// Mean image mass over every record; 0 for an empty trace.
    pub fn mean_mass(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.image_mass).sum::<f64>() / self.records.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(step: u32, layer: u32, mass: f64, token: u32) -> TraceRecord {
        TraceRecord {
            step,
            layer,
            image_mass: mass,
            token_id: token,
        }
    }

    #[test]
    fn mass_examples() {
        let row = AttentionRow::averaged(vec![0.25; 4]);
        assert_eq!(
            image_attention_mass(&row, TokenSpan::new(0, 1).unwrap()).unwrap(),
            0.5
        );
        assert_eq!(
            image_attention_mass(&row, TokenSpan::new(0, 3).unwrap()).unwrap(),
            1.0
        );
        let zero = AttentionRow::averaged(vec![0.0; 3]);
        assert_eq!(
            image_attention_mass(&zero, TokenSpan::new(0, 1).unwrap()).unwrap(),
            0.0
        );
    }

    #[test]
    fn validation_catches_gaps_and_token_conflicts() {
        assert!(DecodeTrace::from_records(vec![]).is_ok());
        assert!(DecodeTrace::from_records(vec![rec(1, 1, 0.2, 3), rec(1, 2, 0.3, 3)]).is_ok());
        assert!(DecodeTrace::from_records(vec![rec(1, 2, 0.2, 3)]).is_err());
        assert!(DecodeTrace::from_records(vec![rec(1, 1, 0.2, 3), rec(1, 2, 0.3, 4)]).is_err());
        assert!(DecodeTrace::from_records(vec![rec(1, 1, 1.2, 3)]).is_err());
        assert!(DecodeTrace::from_records(vec![rec(1, 1, 0.2, 3), rec(3, 1, 0.2, 3)]).is_err());
        assert!(DecodeTrace::from_records(vec![
            rec(1, 1, 0.2, 3),
            rec(1, 2, 0.2, 3),
            rec(2, 1, 0.2, 4)
        ])
        .is_err());
    }

    #[test]
    fn series_reductions() {
        let t = DecodeTrace::from_records(vec![
            rec(1, 1, 0.2, 5),
            rec(1, 2, 0.4, 5),
            rec(2, 1, 0.6, 9),
            rec(2, 2, 0.8, 9),
        ])
        .unwrap();
        assert_eq!(t.num_layers(), 2);
        assert_eq!(t.num_steps(), 2);
        assert_eq!(t.tokens(), vec![5, 9]);
        let series = t.step_series();
        assert!((series[0] - 0.3).abs() < 1e-15 && (series[1] - 0.7).abs() < 1e-15);
        assert_eq!(t.layer_series(2), vec![0.4, 0.8]);
        assert!((t.mean_mass() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn mass_is_bounded_and_additive(
            logits in prop::collection::vec(-5.0f64..5.0, 2..40),
            cut in 0usize..40,
        ) {
            let row = AttentionRow::averaged(crate::attention::softmax(&logits));
            let n = row.len();
            let cut = cut % (n - 1);
            let a = TokenSpan::new(0, cut).unwrap();
            let b = TokenSpan::new(cut + 1, n - 1).unwrap();
            let ma = image_attention_mass(&row, a).unwrap();
            let mb = image_attention_mass(&row, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ma));
            let whole = image_attention_mass(&row, TokenSpan::new(0, n - 1).unwrap()).unwrap();
            prop_assert!((ma + mb - whole).abs() < 1e-12);
        }
    }
}
