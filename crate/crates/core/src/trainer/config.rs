use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preference::AttentionMode;

/// Prefix of environment variables that override config fields, e.g. `SMORE_LR=0.01`.
pub const ENV_PREFIX: &str = "SMORE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Shared embedding dimension.
    pub dim: usize,
    /// LightGCN layers on the user-item graph.
    pub layers: usize,
    pub k_visual: usize,
    pub k_text: usize,
    /// Weight of the contrastive term.
    pub lambda_cl: f64,
    /// Weight of the L2 penalty on batch ID-embedding rows.
    pub lambda_reg: f64,
    pub temperature: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub attention: AttentionMode,
    /// Contrast against every user/item instead of the batch.
    pub cl_full_denominator: bool,
    /// Replace the fused branch with zeros.
    pub ablate_fusion: bool,
    /// Pin all spectral filters to `1 + 0i` and freeze them.
    pub identity_filters: bool,
    /// Cutoffs reported for the final evaluation.
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            k_visual: 10,
            k_text: 10,
            lambda_cl: 0.01,
            lambda_reg: 1e-4,
            temperature: 0.2,
            lr: 1e-3,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 20,
            seed: 2024,
            attention: AttentionMode::PerEntity,
            cl_full_denominator: false,
            ablate_fusion: false,
            identity_filters: false,
            eval_ks: vec![10, 20],
        }
    }
}

/// Cutoff used for validation-driven early stopping.
pub const VALIDATION_K: usize = 20;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return fail(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.layers > 4 {
            return fail(format!("layers must be in 0..=4, got {}", self.layers));
        }
        for (name, k) in [("k_visual", self.k_visual), ("k_text", self.k_text)] {
            if !(1..=64).contains(&k) {
                return fail(format!("{name} must be in 1..=64, got {k}"));
            }
        }
        for (name, v) in [
            ("lambda_cl", self.lambda_cl),
            ("lambda_reg", self.lambda_reg),
            ("lr", self.lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return fail("batch_size, patience and max_epochs must be >= 1".into());
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return fail("eval_ks must list positive cutoffs".into());
        }
        Ok(())
    }

    /// Parses TOML; unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `SMORE_<FIELD>` overrides from `vars`; values use TOML syntax,
    /// bare words are read as strings. `skip` lists variables owned by the CLI.
    pub fn with_overrides<I>(&self, vars: I, skip: &[&str]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let mut any = false;
        for (key, raw) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            if skip.contains(&key.as_str()) {
                continue;
            }
            let field = field.to_ascii_lowercase();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(raw.clone()));
            table.insert(field, value);
            any = true;
        }
        if !any {
            return Ok(self.clone());
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| {
            Error::Config(format!("environment override: {}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
