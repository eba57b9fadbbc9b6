//! Training configuration and the fixed set of ablation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bandit::SamplingMode;
use crate::topo::PretrainMethod;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("`{0}` is a derived quantity and cannot be set in a config file")]
    Derived(String),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {detail}")]
    Value { key: &'static str, detail: String },
    #[error("unknown variant `{0}` (expected one of: {list})", list = Variant::ALL.map(|v| v.name()).join(", "))]
    UnknownVariant(String),
}

/// What feeds the backbone's input layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    /// Projection, warm start, topology priors, gate, context, scaling.
    Full,
    /// The degree prior alone, with no observed features anywhere.
    TopologyOnly,
    /// Projected features on attributed types, zeros elsewhere; no priors,
    /// gate, context or policy scaling.
    BackboneOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub p_min: f64,
    /// Base sampling budget per type.
    #[serde(rename = "N")]
    pub base_budget: usize,
    pub propagation_hops: usize,
    pub update_period: usize,
    pub pretrain_method: PretrainMethod,
    pub pretrain_epochs: usize,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Accepted for compatibility; R-GCN has no attention heads.
    pub num_heads: usize,
    pub sampling_mode: SamplingMode,
    pub policy_scaling: bool,
    pub sampling_context: bool,
    pub completion: bool,
    pub mask_ratio: f64,
    pub rho: f64,
    pub frontend: Frontend,
    pub reward_mode: RewardMode,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            max_epochs: 300,
            patience: 50,
            lambda: 0.4,
            p_min: 0.1,
            base_budget: 20,
            propagation_hops: 3,
            update_period: 5,
            pretrain_method: PretrainMethod::Hybrid,
            pretrain_epochs: 50,
            dropout: 0.5,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            sampling_mode: SamplingMode::Adaptive,
            policy_scaling: true,
            sampling_context: true,
            completion: true,
            mask_ratio: 0.3,
            rho: 0.5,
            frontend: Frontend::Full,
            reward_mode: RewardMode::Norm,
            seed: 0,
            deterministic: false,
        }
    }
}

const DERIVED_KEYS: [&str; 3] = ["eta", "T_tot", "scheduled_rounds"];

impl TrainConfig {
    /// Parses a JSON object; absent keys keep their defaults and an empty
    /// document yields the defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(obj) = value.as_object() {
            if let Some(key) = DERIVED_KEYS.iter().find(|k| obj.contains_key(**k)) {
                return Err(ConfigError::Derived((*key).to_string()));
            }
        }
        let config: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Scheduled policy rounds `T_tot = max_epochs / update_period`; fixed by
    /// the schedule even when early stopping ends training sooner.
    pub fn scheduled_rounds(&self) -> usize {
        (self.max_epochs / self.update_period.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, detail: &str| Err(ConfigError::Value { key, detail: detail.to_string() });
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be finite and non-negative");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return bad("mask_ratio", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho", "must lie in [0, 1]");
        }
        if !(self.p_min >= 0.0 && self.p_min.is_finite()) {
            return bad("p_min", "must be finite and non-negative");
        }
        if self.base_budget < 2 {
            return bad("N", "must be at least 2 (the step size uses ln N)");
        }
        for (key, v) in [
            ("max_epochs", self.max_epochs),
            ("update_period", self.update_period),
            ("propagation_hops", self.propagation_hops),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        Ok(())
    }

    /// Checks that depend on the dataset's number of node types.
    pub fn validate_for_types(&self, k: usize) -> Result<(), ConfigError> {
        self.validate()?;
        if self.p_min >= 1.0 / k as f64 {
            return Err(ConfigError::Value {
                key: "p_min",
                detail: format!("{} must be below 1/K = {:.6} for K = {k}", self.p_min, 1.0 / k as f64),
            });
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the seed and the
    /// determinism flag so runs of one experiment share a hash.
    pub fn hash(&self) -> String {
        let canonical = Self { seed: 0, deterministic: false, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WoPretrain,
    UniformSampling,
    ProportionalSampling,
    WoCompletion,
    TopologyOnly,
    EpsilonGreedy,
    WoPolicyScaling,
    WoSamplingContext,
    /// Plain R-GCN control on projected features.
    BackboneOnly,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::WoPretrain,
        Variant::UniformSampling,
        Variant::ProportionalSampling,
        Variant::WoCompletion,
        Variant::TopologyOnly,
        Variant::EpsilonGreedy,
        Variant::WoPolicyScaling,
        Variant::WoSamplingContext,
        Variant::BackboneOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoPretrain => "wo_pretrain",
            Variant::UniformSampling => "uniform_sampling",
            Variant::ProportionalSampling => "proportional_sampling",
            Variant::WoCompletion => "wo_completion",
            Variant::TopologyOnly => "topology_only",
            Variant::EpsilonGreedy => "epsilon_greedy",
            Variant::WoPolicyScaling => "wo_policy_scaling",
            Variant::WoSamplingContext => "wo_sampling_context",
            Variant::BackboneOnly => "backbone_only",
        }
    }

    /// The config with this variant's single delta applied.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::WoPretrain => c.pretrain_method = PretrainMethod::None,
            Variant::UniformSampling => c.sampling_mode = SamplingMode::Uniform,
            Variant::ProportionalSampling => c.sampling_mode = SamplingMode::Proportional,
            Variant::WoCompletion => c.lambda = 0.0,
            Variant::TopologyOnly => {
                c.frontend = Frontend::TopologyOnly;
                c.completion = false;
            }
            Variant::EpsilonGreedy => c.sampling_mode = SamplingMode::EpsilonGreedy,
            Variant::WoPolicyScaling => c.policy_scaling = false,
            Variant::WoSamplingContext => c.sampling_context = false,
            Variant::BackboneOnly => {
                c.frontend = Frontend::BackboneOnly;
                c.completion = false;
            }
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' ', '/'], "_");
        let key = key.strip_prefix("w_o_").map(|r| format!("wo_{r}")).unwrap_or(key);
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| ConfigError::UnknownVariant(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = TrainConfig::from_json("").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!(TrainConfig::from_json("{}").unwrap(), c);
        assert_eq!(c.scheduled_rounds(), 60);
        assert_eq!((c.learning_rate, c.lambda, c.base_budget), (5e-3, 0.4, 20));
    }

    #[test]
    fn eta_is_rejected_as_derived() {
        let err = TrainConfig::from_json(r#"{"eta": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("derived quantity"), "{err}");
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        assert!(TrainConfig::from_json(r#"{"learning_rat": 0.1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"N": "twenty"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"dropout": 1.0}"#).is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = TrainConfig::from_json(r#"{"N": 80, "sampling_mode": "epsilon_greedy"}"#).unwrap();
        assert_eq!(c.base_budget, 80);
        assert_eq!(c.sampling_mode, SamplingMode::EpsilonGreedy);
    }

    #[test]
    fn floor_is_checked_against_type_count() {
        let c = TrainConfig { p_min: 0.3, ..TrainConfig::default() };
        assert!(c.validate_for_types(3).is_ok());
        assert!(c.validate_for_types(4).is_err());
    }

    #[test]
    fn hash_ignores_seed() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 9, ..a.clone() };
        let c = TrainConfig { lambda: 0.0, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("w/o completion".parse::<Variant>().unwrap(), Variant::WoCompletion);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn each_variant_changes_one_thing() {
        let base = TrainConfig::default();
        assert_eq!(Variant::WoCompletion.apply(&base).lambda, 0.0);
        assert!(!Variant::WoPolicyScaling.apply(&base).policy_scaling);
        assert!(!Variant::WoSamplingContext.apply(&base).sampling_context);
        assert_eq!(Variant::WoPretrain.apply(&base).pretrain_method, PretrainMethod::None);
        assert_eq!(Variant::Full.apply(&base), base);
    }
}
