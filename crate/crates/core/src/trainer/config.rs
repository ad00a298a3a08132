use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::legality::GeoParams;
use crate::primdict::MaskMode;

/// Every hyperparameter of the joint objective, the model and the loop.
///
/// Stored and read as flat `key = value` text using the field names below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Mask steepness.
    pub alpha: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_g: f64,
    /// Weight of the legality energy on the flow endpoint.
    pub beta: f64,
    pub eta: f64,
    pub rho: f64,
    pub tau: f64,
    /// Noise std of the flow source.
    pub sigma: f64,
    /// Dictionary size.
    pub m: usize,
    /// Maximum atom width.
    pub k: usize,
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Learning rate of atom content and gate priorities.
    pub lr_dict: f64,
    /// Learning rate of the width parameters `φ`.
    pub lr_width: f64,
    pub lr_net: f64,
    pub lr_logits: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; 0 runs all epochs.
    pub max_steps: usize,
    pub seed: u64,
    /// Probability of replacing the context by the null vector in training.
    pub cond_dropout: f64,
    pub euler_steps: usize,
    pub guidance: f64,
    /// Observed prefix length; 0 trains unconditionally.
    pub t_obs: usize,
    pub mask: MaskMode,
    /// Let the flow-side energy send gradient into the logits through `Z_t`.
    pub flow_psi_to_logits: bool,
    /// Initial value of every placement logit.
    pub logit_init: f64,
    /// Epochs over which `β` ramps linearly from 0.
    pub beta_warmup_epochs: usize,
    /// Epochs over which `λ_g` ramps linearly from 0.
    pub geo_warmup_epochs: usize,
    pub logit_optimizer: LogitOptimizer,
}

/// Update rule for the per-sample placement logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitOptimizer {
    Adam,
    Sgd,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lambda_s: 0.1,
            lambda_p: 0.1,
            lambda_g: 1.0,
            beta: 0.5,
            eta: 0.1,
            rho: 1.0,
            tau: 0.1,
            sigma: 1.0,
            m: 8,
            k: 10,
            d: 64,
            heads: 4,
            blocks: 3,
            mlp_ratio: 2,
            lr_dict: 3e-3,
            lr_width: 1e-4,
            lr_net: 1e-3,
            lr_logits: 1.0,
            batch_size: 32,
            epochs: 10,
            max_steps: 0,
            seed: 0,
            cond_dropout: 0.1,
            euler_steps: 50,
            guidance: 1.5,
            t_obs: 0,
            mask: MaskMode::Learned,
            flow_psi_to_logits: true,
            logit_init: -4.0,
            beta_warmup_epochs: 0,
            geo_warmup_epochs: 0,
            logit_optimizer: LogitOptimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn geo(&self) -> GeoParams {
        GeoParams {
            eta: self.eta,
            rho: self.rho,
            tau: self.tau,
            lambda_s: self.lambda_s,
            lambda_p: self.lambda_p,
            lambda_g: self.lambda_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("lambda_s", self.lambda_s),
            ("lambda_p", self.lambda_p),
            ("lambda_g", self.lambda_g),
            ("beta", self.beta),
            ("eta", self.eta),
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("lr_dict", self.lr_dict),
            ("lr_width", self.lr_width),
            ("lr_net", self.lr_net),
            ("lr_logits", self.lr_logits),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::Config("cond_dropout must be in [0, 1]".into()));
        }
        if self.m == 0 || self.k == 0 || self.batch_size == 0 || self.euler_steps == 0 {
            return Err(Error::Config("m, k, batch_size and euler_steps must be ≥ 1".into()));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d={} not divisible by heads={}", self.d, self.heads)));
        }
        Ok(())
    }

    /// Checks the data-dependent constraints `K ≤ L` and `T_obs < L`.
    pub fn validate_for_len(&self, l: usize) -> Result<()> {
        self.validate()?;
        if self.k > l {
            return Err(Error::Config(format!("k={} exceeds trajectory length {l}", self.k)));
        }
        if self.t_obs >= l {
            return Err(Error::Config(format!("t_obs={} must be below {l}", self.t_obs)));
        }
        Ok(())
    }

    pub fn conditional(&self) -> bool {
        self.t_obs > 0
    }

    /// Flat `key = value` rendering, one field per line.
    pub fn to_kv(&self) -> String {
        let Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!()
        };
        map.iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k} = {s}\n"),
                other => format!("{k} = {other}\n"),
            })
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults, unknown keys are an error.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        cfg.apply_overrides(&pairs)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    /// Applies `(key, value)` pairs on top of the current values.
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let Value::Object(mut map) = serde_json::to_value(&*self)? else {
            unreachable!()
        };
        for (k, v) in pairs {
            if !map.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            map.insert(k.clone(), parse_scalar(v));
        }
        *self = serde_json::from_value(Value::Object(Map::from_iter(map)))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn parse_scalar(v: &str) -> Value {
    if let Ok(i) = v.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = v.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return Value::Number(n);
        }
    }
    match v {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::String(v.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let cfg = TrainConfig {
            alpha: 7.25,
            lr_logits: 0.1 + 0.2,
            mask: MaskMode::Off,
            flow_psi_to_logits: false,
            seed: u64::MAX,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parsing_rules() {
        let cfg = TrainConfig::from_kv("# comment\nm = 12\n\nbeta=0  # off\nmask = off\n").unwrap();
        assert_eq!((cfg.m, cfg.beta, cfg.mask), (12, 0.0, MaskMode::Off));
        assert_eq!(cfg.k, 10);
        // integral text is accepted for real fields
        assert_eq!(TrainConfig::from_kv("alpha = 3").unwrap().alpha, 3.0);
        assert!(matches!(TrainConfig::from_kv("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_kv("m 3"), Err(Error::Parse { line: 1, .. })));
        assert!(TrainConfig::from_kv("m = -1").is_err());
    }

    #[test]
    fn overrides_and_validation() {
        let mut cfg = TrainConfig::default();
        cfg.apply_overrides(&[("epochs".into(), "3".into())]).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(TrainConfig { beta: -1.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { heads: 3, ..cfg.clone() }.validate().is_err());
        assert!(cfg.validate_for_len(9).is_err());
        assert!(cfg.validate_for_len(10).is_ok());
        assert!(TrainConfig { t_obs: 10, ..cfg }.validate_for_len(10).is_err());
    }
}
