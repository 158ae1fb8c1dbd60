//! One-flag ablation runner: the base configuration plus each requested
//! variant run under shared seeds, with side-by-side results.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::stats::mean;

use super::eval::{evaluate, EvalReport};
use super::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Skip percentile and coherence filtering.
    NoPs,
    /// Skip noise filtering.
    NoNoise,
    /// Sum per-token standard deviations instead of variances.
    CumStd,
    /// Integrate the bonus per token instead of per trajectory.
    TokenInt,
}

impl AblationMode {
    pub fn label(&self) -> &'static str {
        match self {
            AblationMode::NoPs => "no_ps",
            AblationMode::NoNoise => "no_noise",
            AblationMode::CumStd => "cum_std",
            AblationMode::TokenInt => "token_int",
        }
    }

    /// Flips exactly one flag relative to the base configuration.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            AblationMode::NoPs => cfg.shaping.no_ps_filtering = true,
            AblationMode::NoNoise => cfg.shaping.no_noise_filtering = true,
            AblationMode::CumStd => cfg.shaping.cumulative_std = true,
            AblationMode::TokenInt => cfg.shaping.token_integration = true,
        }
        cfg
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no_ps" => Ok(AblationMode::NoPs),
            "no_noise" => Ok(AblationMode::NoNoise),
            "cum_std" => Ok(AblationMode::CumStd),
            "token_int" => Ok(AblationMode::TokenInt),
            other => Err(Error::config(format!(
                "unknown ablation mode '{other}' (expected no_ps, no_noise, cum_std, token_int)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub final_success_rate: f64,
    pub mean_reward_last_10: f64,
    pub first_success_iteration: Option<u64>,
    pub mean_bonus: f64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateReport {
    pub rows: Vec<AblationRow>,
}

impl AblateReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("variant,final_success_rate,mean_reward_last_10,first_success,mean_bonus\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{:.6}\n",
                r.variant,
                r.final_success_rate,
                r.mean_reward_last_10,
                r.first_success_iteration
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "never".into()),
                r.mean_bonus
            ));
        }
        out
    }
}

/// Runs the base config plus one run per mode, all on the base seed, each
/// into its own subdirectory of the base output dir. Duplicate modes are
/// rejected.
pub fn ablate(base: &RunConfig, modes: &[AblationMode]) -> Result<AblateReport> {
    base.validate()?;
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(Error::config(format!("duplicate ablation mode {}", m.label())));
        }
    }
    let root = base.train.output_dir.clone();
    let mut variants: Vec<(String, RunConfig)> = vec![("base".to_string(), base.clone())];
    for mode in modes {
        variants.push((mode.label().to_string(), mode.apply(base)));
    }
    // Variants share the base run's pretrained bonus checkpoint when one
    // exists; it depends only on settings the modes never touch.
    let base_pretrained = std::path::Path::new(&root)
        .join("checkpoints")
        .join(super::CFN_PRETRAINED_CHECKPOINT);
    let mut rows = Vec::with_capacity(variants.len());
    for (label, mut cfg) in variants {
        cfg.train.output_dir = format!("{root}/ablate/{label}");
        if base_pretrained.exists() {
            let dest_dir = std::path::Path::new(&cfg.train.output_dir).join("checkpoints");
            std::fs::create_dir_all(&dest_dir)
                .map_err(|e| Error::io(dest_dir.display().to_string(), e))?;
            let dest = dest_dir.join(super::CFN_PRETRAINED_CHECKPOINT);
            std::fs::copy(&base_pretrained, &dest)
                .map_err(|e| Error::io(dest.display().to_string(), e))?;
        }
        let artifacts = train(&cfg)?;
        let eval = evaluate(
            &artifacts.final_policy,
            &cfg.env,
            cfg.policy.window,
            &cfg.eval.k,
            cfg.eval.samples,
            crate::rng::derive_seed(cfg.train.seed, "ablate-eval", &[]),
        )?;
        let records = &artifacts.records;
        let last10: Vec<f64> = records
            .iter()
            .rev()
            .take(10)
            .map(|r| r.mean_outcome_reward)
            .collect();
        rows.push(AblationRow {
            variant: label,
            final_success_rate: records.last().map(|r| r.success_rate).unwrap_or(0.0),
            mean_reward_last_10: mean(&last10),
            first_success_iteration: artifacts.first_success_iteration,
            mean_bonus: mean(&records.iter().map(|r| r.mean_bonus).collect::<Vec<_>>()),
            eval,
        });
        let csv_path = std::path::Path::new(&root).join("ablate").join("summary.csv");
        if let Some(parent) = csv_path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        std::fs::write(&csv_path, AblateReport { rows: rows.clone() }.to_csv())
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    Ok(AblateReport { rows })
}
