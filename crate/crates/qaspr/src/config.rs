//! Run configuration: JSON files (presets), CLI overrides, validation.
//!
//! A config file may set any subset of fields; unknown keys are rejected.
//! CLI flags override file values, and whatever remains unset falls back to
//! the defaults below. Every run artifact embeds the fully resolved config,
//! so a run can be reproduced from its own output.

use std::fmt;
use std::fs;
use std::path::Path;

use qaspr_core::mask::MaskConfig;
use qaspr_core::metrics::MaskMode;
use qaspr_core::reasoner::ReasonerConfig;
use qaspr_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(FieldErrors),
}

/// Every offending field, reported together.
#[derive(Debug)]
pub struct FieldErrors(pub Vec<String>);

impl fmt::Display for FieldErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

/// Fully resolved run configuration. Serialized field order is fixed, so two
/// runs with the same settings embed byte-identical config blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub version: String,
    pub train_dir: Option<String>,
    pub ind_dir: Option<String>,
    pub out_dir: String,
    pub dim: usize,
    pub path_len: usize,
    pub top_k: usize,
    pub p_e: f64,
    pub p_tau: f64,
    pub mask_eps: f64,
    pub relu: bool,
    pub shared_transform: bool,
    pub separate_scorers: bool,
    pub scoring: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub threads: usize,
    pub eval_mask: String,
    pub pe_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "custom".into(),
            version: "v0".into(),
            train_dir: None,
            ind_dir: None,
            out_dir: "run".into(),
            dim: 32,
            path_len: 3,
            top_k: 100,
            p_e: 0.5,
            p_tau: 0.5,
            mask_eps: 1e-9,
            relu: false,
            shared_transform: false,
            separate_scorers: false,
            scoring: true,
            lr: 5e-3,
            batch_size: 100,
            max_epochs: 30,
            patience: 5,
            eval_every: 1,
            seed: 42,
            eval_seed: 42,
            threads: 1,
            eval_mask: "sampled".into(),
            pe_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// A config file: any subset of [`RunConfig`]'s fields.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartialConfig {
    pub dataset: Option<String>,
    pub version: Option<String>,
    pub train_dir: Option<String>,
    pub ind_dir: Option<String>,
    pub out_dir: Option<String>,
    pub dim: Option<usize>,
    pub path_len: Option<usize>,
    pub top_k: Option<usize>,
    pub p_e: Option<f64>,
    pub p_tau: Option<f64>,
    pub mask_eps: Option<f64>,
    pub relu: Option<bool>,
    pub shared_transform: Option<bool>,
    pub separate_scorers: Option<bool>,
    pub scoring: Option<bool>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
    pub eval_seed: Option<u64>,
    pub threads: Option<usize>,
    pub eval_mask: Option<String>,
    pub pe_grid: Option<Vec<f64>>,
}

impl PartialConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: display.clone(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: display, source })
    }

    /// Applies this layer on top of `base`, overriding only the set fields.
    pub fn apply(self, base: &mut RunConfig) {
        macro_rules! merge {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { base.$field = v; })*
            };
        }
        merge!(
            dataset, version, out_dir, dim, path_len, top_k, p_e, p_tau, mask_eps, relu,
            shared_transform, separate_scorers, scoring, lr, batch_size, max_epochs, patience,
            eval_every, seed, eval_seed, threads, eval_mask, pe_grid,
        );
        if self.train_dir.is_some() {
            base.train_dir = self.train_dir;
        }
        if self.ind_dir.is_some() {
            base.ind_dir = self.ind_dir;
        }
    }
}

impl RunConfig {
    /// Resolves defaults -> config file -> CLI overrides, then validates.
    pub fn resolve(
        file: Option<PartialConfig>,
        overrides: PartialConfig,
    ) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        // eval_seed follows seed unless set explicitly somewhere
        let eval_seed_set = file.as_ref().is_some_and(|f| f.eval_seed.is_some())
            || overrides.eval_seed.is_some();
        if let Some(f) = file {
            f.apply(&mut cfg);
        }
        overrides.apply(&mut cfg);
        if !eval_seed_set {
            cfg.eval_seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field and reports all offenders at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.dim < 1 {
            errs.push(format!("dim must be at least 1 (got {})", self.dim));
        }
        if self.path_len < 1 {
            errs.push(format!("path_len must be at least 1 (got {})", self.path_len));
        }
        if self.top_k < 1 {
            errs.push(format!("top_k must be at least 1 (got {})", self.top_k));
        }
        if !unit(self.p_e) {
            errs.push(format!("p_e must be in [0, 1] (got {})", self.p_e));
        }
        if !unit(self.p_tau) {
            errs.push(format!("p_tau must be in [0, 1] (got {})", self.p_tau));
        }
        if !(self.mask_eps > 0.0) {
            errs.push(format!("mask_eps must be positive (got {})", self.mask_eps));
        }
        if !(self.lr > 0.0) {
            errs.push(format!("lr must be positive (got {})", self.lr));
        }
        if self.batch_size < 1 {
            errs.push(format!("batch_size must be at least 1 (got {})", self.batch_size));
        }
        if self.patience < 1 {
            errs.push(format!("patience must be at least 1 (got {})", self.patience));
        }
        if self.eval_every < 1 {
            errs.push(format!("eval_every must be at least 1 (got {})", self.eval_every));
        }
        if self.eval_mask != "sampled" && self.eval_mask != "none" {
            errs.push(format!("eval_mask must be \"sampled\" or \"none\" (got {:?})", self.eval_mask));
        }
        if !self.pe_grid.iter().all(|&p| unit(p)) {
            errs.push(format!("pe_grid values must be in [0, 1] (got {:?})", self.pe_grid));
        }
        if errs.is_empty() { Ok(()) } else { Err(ConfigError::Invalid(FieldErrors(errs))) }
    }

    pub fn reasoner(&self) -> ReasonerConfig {
        ReasonerConfig {
            path_len: self.path_len,
            top_k: self.top_k,
            dim: self.dim,
            masking_enabled: true,
            scoring_enabled: self.scoring,
            relu: self.relu,
        }
    }

    pub fn mask(&self) -> MaskConfig {
        MaskConfig { p_e: self.p_e, p_tau: self.p_tau, eps: self.mask_eps, seed: self.seed }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_every: self.eval_every,
            seed: self.seed,
        }
    }

    pub fn mask_mode(&self) -> MaskMode {
        if self.eval_mask == "none" { MaskMode::Disabled } else { MaskMode::Sampled }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn resolve_layers_file_then_flags() {
        let file = PartialConfig { dim: Some(16), seed: Some(7), ..Default::default() };
        let flags = PartialConfig { dim: Some(8), ..Default::default() };
        let cfg = RunConfig::resolve(Some(file), flags).unwrap();
        assert_eq!(cfg.dim, 8);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.eval_seed, 7, "eval seed follows seed when unset");
    }

    #[test]
    fn explicit_eval_seed_sticks() {
        let flags = PartialConfig { seed: Some(3), eval_seed: Some(99), ..Default::default() };
        let cfg = RunConfig::resolve(None, flags).unwrap();
        assert_eq!(cfg.eval_seed, 99);
    }

    #[test]
    fn all_offending_fields_are_listed() {
        let flags = PartialConfig {
            p_e: Some(1.5),
            lr: Some(-1.0),
            top_k: Some(0),
            ..Default::default()
        };
        let err = RunConfig::resolve(None, flags).unwrap_err().to_string();
        assert!(err.contains("p_e"), "{err}");
        assert!(err.contains("lr"), "{err}");
        assert!(err.contains("top_k"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{{\"dim\": 4, \"wat\": 1}}").unwrap();
        let err = PartialConfig::load(f.path()).unwrap_err().to_string();
        assert!(err.contains("wat"), "{err}");
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
