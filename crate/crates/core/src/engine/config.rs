use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MdsamError, Result};

/// What to do with the attention row after the image slice is blended.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum RenormMode {
    /// Leave the blended row as-is; its sum may exceed 1.
    Verbatim,
    /// Rescale the whole row so it sums to 1 again.
    #[default]
    RowRenormalize,
}

/// Lifetime of the sparse-attention memory during generation.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    /// One rolling window across layers and generated tokens.
    #[default]
    Persistent,
    /// Window cleared at the start of every generated token.
    PerToken,
}

impl RenormMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Verbatim => "verbatim",
            Self::RowRenormalize => "row_renormalize",
        }
    }
}

impl ResetPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Persistent => "persistent",
            Self::PerToken => "per_token",
        }
    }
}

impl fmt::Display for RenormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ResetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenormMode {
    type Err = MdsamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(Self::Verbatim),
            "row_renormalize" => Ok(Self::RowRenormalize),
            other => Err(MdsamError::config(
                "renorm",
                format!("expected `verbatim` or `row_renormalize`, got `{other}`"),
            )),
        }
    }
}

impl FromStr for ResetPolicy {
    type Err = MdsamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistent" => Ok(Self::Persistent),
            "per_token" => Ok(Self::PerToken),
            other => Err(MdsamError::config(
                "reset",
                format!("expected `persistent` or `per_token`, got `{other}`"),
            )),
        }
    }
}

/// Memory window used by every published profile.
pub const DEFAULT_WINDOW: usize = 8;

/// Hyperparameters of the steering pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdsamConfig {
    /// Fraction of image positions kept by top-k, in (0, 1].
    pub tau: f64,
    /// Decay base of the memory weights, in (0, 1).
    pub alpha: f64,
    /// Blend strength of the aggregate, >= 0.
    pub beta: f64,
    /// Memory capacity L, >= 1.
    pub window: usize,
    pub renorm: RenormMode,
    pub reset: ResetPolicy,
}

impl MdsamConfig {
    /// Builds a config with the default window, renormalization and reset policy.
    pub fn new(tau: f64, alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            alpha,
            beta,
            window: DEFAULT_WINDOW,
            renorm: RenormMode::default(),
            reset: ResetPolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn llava() -> Self {
        Self::new(0.7, 0.9, 0.6).expect("preset is valid")
    }

    pub fn deepseekvl() -> Self {
        Self::new(0.8, 0.9, 0.5).expect("preset is valid")
    }

    pub fn minigpt4() -> Self {
        Self::new(0.6, 0.9, 0.5).expect("preset is valid")
    }

    /// Looks up a published per-model profile by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "llava" => Ok(Self::llava()),
            "deepseekvl" => Ok(Self::deepseekvl()),
            "minigpt4" => Ok(Self::minigpt4()),
            other => Err(MdsamError::config(
                "preset",
                format!("unknown preset `{other}` (expected llava, deepseekvl or minigpt4)"),
            )),
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_renorm(mut self, renorm: RenormMode) -> Self {
        self.renorm = renorm;
        self
    }

    pub fn with_reset(mut self, reset: ResetPolicy) -> Self {
        self.reset = reset;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        validate_alpha(self.alpha)?;
        validate_beta(self.beta)?;
        if self.window == 0 {
            return Err(MdsamError::config(
                "window",
                "memory window must be at least 1",
            ));
        }
        Ok(())
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(MdsamError::config(
            "tau",
            format!("{tau} is outside (0, 1]"),
        ));
    }
    Ok(())
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MdsamError::config(
            "alpha",
            format!("{alpha} is outside (0, 1)"),
        ));
    }
    Ok(())
}

pub(crate) fn validate_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(MdsamError::config(
            "beta",
            format!("{beta} must be finite and >= 0"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_profiles() {
        let l = MdsamConfig::preset("llava").unwrap();
        assert_eq!((l.tau, l.alpha, l.beta, l.window), (0.7, 0.9, 0.6, 8));
        let d = MdsamConfig::preset("DeepSeekVL").unwrap();
        assert_eq!((d.tau, d.alpha, d.beta, d.window), (0.8, 0.9, 0.5, 8));
        let m = MdsamConfig::preset("minigpt4").unwrap();
        assert_eq!((m.tau, m.alpha, m.beta, m.window), (0.6, 0.9, 0.5, 8));
        assert_eq!(l.renorm, RenormMode::RowRenormalize);
        assert_eq!(l.reset, ResetPolicy::Persistent);
        assert!(MdsamConfig::preset("opera").is_err());
    }

    #[test]
    fn range_checks_name_the_key() {
        let key_of = |r: Result<MdsamConfig>| match r {
            Err(MdsamError::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(key_of(MdsamConfig::new(1.5, 0.9, 0.6)), "tau");
        assert_eq!(key_of(MdsamConfig::new(0.0, 0.9, 0.6)), "tau");
        assert_eq!(key_of(MdsamConfig::new(0.5, 1.0, 0.6)), "alpha");
        assert_eq!(key_of(MdsamConfig::new(0.5, 0.9, -0.1)), "beta");
        let zero_window = MdsamConfig::llava().with_window(0);
        assert!(zero_window.validate().is_err());
    }

    #[test]
    fn enum_names_parse_back() {
        for m in [RenormMode::Verbatim, RenormMode::RowRenormalize] {
            assert_eq!(m.as_str().parse::<RenormMode>().unwrap(), m);
        }
        for p in [ResetPolicy::Persistent, ResetPolicy::PerToken] {
            assert_eq!(p.as_str().parse::<ResetPolicy>().unwrap(), p);
        }
    }
}
