//! Policy evaluation: pass@k via the unbiased combinatorial estimator and
//! mean@k over fresh samples, per prompt, written to `eval.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::policy::sample_group;
use crate::rng::derive_seed;

/// Unbiased pass@k from `n` samples with `c` successes:
/// `1 - C(n - c, k) / C(n, k)`, evaluated as a telescoping product.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "pass@k needs 1 <= k <= samples, got k={k}, n={n}"
        )));
    }
    if c > n {
        return Err(Error::usage("successes exceed samples"));
    }
    let mut ratio = 1.0;
    for i in 0..k {
        let num = (n - c) as f64 - i as f64;
        if num <= 0.0 {
            return Ok(1.0);
        }
        ratio *= num / (n - i) as f64;
    }
    Ok(1.0 - ratio)
}

/// Mean success over the first `k` outcomes.
pub fn mean_at_k(outcomes: &[bool], k: usize) -> Result<f64> {
    if k == 0 || k > outcomes.len() {
        return Err(Error::config(format!(
            "mean@k needs 1 <= k <= samples, got k={k}, n={}",
            outcomes.len()
        )));
    }
    Ok(outcomes[..k].iter().filter(|&&b| b).count() as f64 / k as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub prompt_id: u32,
    pub k: usize,
    pub pass_at_k: f64,
    pub mean_at_k: f64,
    pub samples: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub samples: usize,
    pub seed: u64,
}

impl EvalReport {
    /// Mean pass@k across prompts for one k.
    pub fn mean_pass_at(&self, k: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.k == k)
            .map(|r| r.pass_at_k)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(crate::stats::mean(&vals))
        }
    }
}

/// Samples `samples` rollouts per prompt under the given policy and reports
/// pass@k / mean@k for each requested k.
pub fn evaluate(
    policy: &NetParams,
    spec: &EnvSpec,
    window: usize,
    ks: &[usize],
    samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if max_k == 0 {
        return Err(Error::config("at least one k value required"));
    }
    if samples < max_k.max(2) {
        return Err(Error::config(format!(
            "samples ({samples}) must cover the largest k ({max_k})"
        )));
    }
    let mut rows = Vec::new();
    for prompt_id in 0..spec.num_prompts {
        let group = sample_group(
            policy,
            spec,
            window,
            prompt_id,
            samples,
            derive_seed(seed, "eval", &[prompt_id as u64]),
        )?;
        let outcomes: Vec<bool> = group
            .rewards
            .iter()
            .map(|&r| r == spec.reward_correct)
            .collect();
        let c = outcomes.iter().filter(|&&b| b).count();
        for &k in ks {
            rows.push(EvalRow {
                prompt_id,
                k,
                pass_at_k: pass_at_k(samples, c, k)?,
                mean_at_k: mean_at_k(&outcomes, k)?,
                samples,
                successes: c,
            });
        }
    }
    Ok(EvalReport {
        rows,
        samples,
        seed,
    })
}

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("prompt_id,k,pass_at_k,mean_at_k,samples,successes,seed\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{}\n",
            r.prompt_id, r.k, r.pass_at_k, r.mean_at_k, r.samples, r.successes, report.seed
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
