//! Run configuration: one strict JSON document covering the environment,
//! both networks, shaping, and the training loop. Unknown keys are rejected;
//! every default is materialized into `config.resolved.json` inside the run
//! directory so a run's provenance is always on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::net::{Activation, OptimKind};
use crate::shaping::{DapoLimits, FilterConfig, ShapingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Hidden layer widths; the input and output dims come from the env.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Number of trailing tokens in the feature window.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_policy_optimizer")]
    pub optimizer: OptimKind,
    #[serde(default = "default_policy_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Zero the output layer at initialization so the starting policy is
    /// exactly uniform over tokens.
    #[serde(default = "default_true")]
    pub zero_init_head: bool,
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_window() -> usize {
    crate::policy::DEFAULT_CONTEXT_WINDOW
}

fn default_policy_optimizer() -> OptimKind {
    OptimKind::AdamW
}

fn default_policy_lr() -> f64 {
    0.02
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: default_hidden(),
            activation: default_activation(),
            window: default_window(),
            optimizer: default_policy_optimizer(),
            learning_rate: default_policy_lr(),
            weight_decay: 0.0,
            zero_init_head: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfnConfig {
    /// Output dimension: the number of coins flipped per visit.
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_cfn_lr_pretrain")]
    pub lr_pretrain: f64,
    #[serde(default = "default_cfn_lr_rl")]
    pub lr_rl: f64,
    #[serde(default = "default_cfn_minibatch")]
    pub minibatch: usize,
    /// Optimizer steps in the pretraining phase.
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    /// Size of the rollout corpus the pretraining steps cycle over. Each
    /// visit keeps the label it was collected with.
    #[serde(default = "default_pretrain_pairs")]
    pub pretrain_pairs: usize,
    /// Passes over each iteration's visited tokens during training.
    #[serde(default = "default_passes")]
    pub passes_per_iter: usize,
}

fn default_pretrain_pairs() -> usize {
    512
}

fn default_d() -> usize {
    crate::cfn::DEFAULT_OUTPUT_DIM
}

fn default_cfn_lr_pretrain() -> f64 {
    1e-3
}

fn default_cfn_lr_rl() -> f64 {
    1e-4
}

fn default_cfn_minibatch() -> usize {
    8
}

fn default_pretrain_steps() -> usize {
    500
}

fn default_passes() -> usize {
    1
}

impl Default for CfnConfig {
    fn default() -> Self {
        CfnConfig {
            d: default_d(),
            lr_pretrain: default_cfn_lr_pretrain(),
            lr_rl: default_cfn_lr_rl(),
            minibatch: default_cfn_minibatch(),
            pretrain_steps: default_pretrain_steps(),
            pretrain_pairs: default_pretrain_pairs(),
            passes_per_iter: default_passes(),
        }
    }
}

/// Clipping and regularization knobs; the frozen reference parameters are
/// supplied by the trainer at run time. DAPO-style runs typically raise
/// `eps_high` to 0.28, enable `token_level_loss`, and keep `beta_kl` at
/// zero (enforced when `dapo.enabled`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSettings {
    #[serde(default = "default_eps")]
    pub eps_low: f64,
    #[serde(default = "default_eps")]
    pub eps_high: f64,
    #[serde(default)]
    pub beta_kl: f64,
    #[serde(default)]
    pub token_level_loss: bool,
}

fn default_eps() -> f64 {
    0.2
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        SurrogateSettings {
            eps_low: default_eps(),
            eps_high: default_eps(),
            beta_kl: 0.0,
            token_level_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DapoConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Resampling attempts per degenerate group before giving up on it.
    #[serde(default = "default_retry_cap")]
    pub resample_retry_cap: u32,
    #[serde(default)]
    pub soft_length_limit: Option<usize>,
    #[serde(default)]
    pub penalty_slope: f64,
}

fn default_retry_cap() -> u32 {
    3
}

impl Default for DapoConfig {
    fn default() -> Self {
        DapoConfig {
            enabled: false,
            resample_retry_cap: default_retry_cap(),
            soft_length_limit: None,
            penalty_slope: 0.0,
        }
    }
}

impl DapoConfig {
    pub fn limits(&self) -> DapoLimits {
        DapoLimits {
            soft_length_limit: self.soft_length_limit,
            penalty_slope: self.penalty_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: u64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_prompts_per_step")]
    pub prompts_per_step: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Skip the pretraining requirement and start from a fresh bonus model.
    #[serde(default)]
    pub allow_fresh_cfn: bool,
}

fn default_group_size() -> usize {
    8
}

fn default_prompts_per_step() -> usize {
    4
}

fn default_output_dir() -> String {
    "runs/run".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_ks")]
    pub k: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_ks() -> Vec<usize> {
    vec![1, 8]
}

fn default_samples() -> usize {
    64
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: default_ks(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub cfn: CfnConfig,
    #[serde(default)]
    pub surrogate: SurrogateSettings,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub shaping: ShapingConfig,
    #[serde(default)]
    pub dapo: DapoConfig,
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.filter.validate()?;
        self.shaping.validate()?;
        if self.policy.hidden.contains(&0) {
            return Err(Error::config("policy hidden dims must be >= 1"));
        }
        if self.policy.window == 0 {
            return Err(Error::config("feature window must be >= 1"));
        }
        if self.policy.learning_rate <= 0.0 || self.cfn.lr_pretrain <= 0.0 || self.cfn.lr_rl <= 0.0
        {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.cfn.d == 0 {
            return Err(Error::config("cfn output dim must be >= 1"));
        }
        if self.cfn.minibatch == 0 {
            return Err(Error::config("cfn minibatch must be >= 1"));
        }
        if self.cfn.pretrain_steps > 0 && self.cfn.pretrain_pairs == 0 {
            return Err(Error::config("pretrain_pairs must be >= 1 when pretraining"));
        }
        if self.train.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.train.group_size < 2 {
            return Err(Error::config("group_size must be >= 2"));
        }
        if self.train.prompts_per_step == 0 {
            return Err(Error::config("prompts_per_step must be >= 1"));
        }
        if !(self.surrogate.eps_low > 0.0
            && self.surrogate.eps_low < 1.0
            && self.surrogate.eps_high > 0.0
            && self.surrogate.eps_high < 1.0)
        {
            return Err(Error::config("clip range must lie in (0, 1)"));
        }
        if self.surrogate.beta_kl < 0.0 {
            return Err(Error::config("beta_kl must be >= 0"));
        }
        if self.dapo.enabled && self.surrogate.beta_kl != 0.0 {
            return Err(Error::config("beta_kl must be 0 in DAPO mode"));
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::config("eval k values must be >= 1"));
        }
        if self.eval.samples < self.eval.k.iter().copied().max().unwrap_or(1) {
            return Err(Error::config("eval samples must cover the largest k"));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "env": {"kind": "chain_lock", "vocab_size": 2, "horizon": 3, "target": [1, 1, 1]},
            "train": {"iterations": 5}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.group_size, 8);
        assert_eq!(cfg.cfn.d, 20);
        assert_eq!(cfg.filter.top_percentile, 0.30);
        assert_eq!(cfg.filter.min_run, 3);
        assert_eq!(cfg.shaping.gamma_max, 0.4);
        assert_eq!(cfg.shaping.alpha, 0.5);
        assert_eq!(cfg.shaping.schedule.t_start_decay, 10);
        assert_eq!(cfg.shaping.schedule.t_end_decay, 200);
        assert_eq!(cfg.shaping.schedule.beta_floor, 0.1);
        assert_eq!(cfg.cfn.lr_pretrain, 1e-3);
        assert_eq!(cfg.cfn.lr_rl, 1e-4);
        assert_eq!(cfg.cfn.minibatch, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = minimal_json().replace(
            "\"iterations\": 5",
            "\"iterations\": 5, \"mystery\": true",
        );
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn resolved_json_roundtrips() {
        let cfg: RunConfig = serde_json::from_str(&minimal_json()).unwrap();
        let dumped = cfg.to_pretty_json().unwrap();
        let back: RunConfig = serde_json::from_str(&dumped).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn dapo_mode_requires_zero_kl() {
        let mut cfg: RunConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.dapo.enabled = true;
        cfg.surrogate.beta_kl = 0.01;
        assert!(cfg.validate().is_err());
        cfg.surrogate.beta_kl = 0.0;
        cfg.validate().unwrap();
    }

    #[test]
    fn env_invariants_checked_via_config() {
        let bad = minimal_json().replace("\"vocab_size\": 2", "\"vocab_size\": 1");
        let cfg: RunConfig = serde_json::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
    }
}
