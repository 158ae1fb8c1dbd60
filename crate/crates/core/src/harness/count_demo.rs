//! Count-estimation demo: train the bonus model on a synthetic Zipf
//! visitation stream over enumerated states, then compare estimated counts
//! against the exact counter and report percentile-retention statistics for
//! sampled trajectories.

use serde::{Deserialize, Serialize};

use crate::cfn::{self, CfnBatch, CfnModel};
use crate::config::RunConfig;
use crate::env::{enumerate_reachable, State, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::policy::{sample_group, FeatureEncoder, StateFeatures};
use crate::rng::{derive_rng, derive_seed};
use crate::shaping::percentile_filter;
use crate::stats::{median, spearman};

use super::train::initial_policy;

/// Zipf exponent for the synthetic visitation stream.
const ZIPF_EXPONENT: f64 = 1.1;
/// Scale for the rank-to-count mapping; chosen so 100 states span counts
/// from triple digits down to single visits.
const ZIPF_SCALE: f64 = 128.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateCountRow {
    pub tokens: Vec<u32>,
    pub true_count: u64,
    pub estimated_count: f64,
    pub inverse_count: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountDemoReport {
    pub rows: Vec<StateCountRow>,
    /// Rank correlation between the estimated and true inverse counts.
    pub spearman: f64,
    /// Estimate for a state the stream never visited.
    pub unseen_inverse_count: f64,
    /// Median estimate among states visited at least 16 times.
    pub median_heavy_inverse_count: f64,
    /// (trajectory length, tokens retained by the percentile stage).
    pub retention: Vec<(usize, usize)>,
    pub total_visits: u64,
}

impl CountDemoReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("tokens                true_n   est_n    1/n_hat\n");
        for row in self.rows.iter().take(20) {
            out.push_str(&format!(
                "{:<20} {:>7} {:>8.2} {:>9.4}\n",
                format!("{:?}", row.tokens),
                row.true_count,
                row.estimated_count,
                row.inverse_count
            ));
        }
        if self.rows.len() > 20 {
            out.push_str(&format!("... ({} states total)\n", self.rows.len()));
        }
        out.push_str(&format!(
            "spearman(est 1/n, true 1/n) = {:.4}\nunseen-state inverse count {:.4} vs heavy-state median {:.4}\n",
            self.spearman, self.unseen_inverse_count, self.median_heavy_inverse_count
        ));
        out.push_str("percentile retention (len -> kept): ");
        for (l, kept) in &self.retention {
            out.push_str(&format!("{l}->{kept} "));
        }
        out.push('\n');
        out
    }
}

/// Deterministic Zipf counts for ranks `1..=n`.
pub fn zipf_counts(n: usize, scale: f64, exponent: f64) -> Vec<u64> {
    (1..=n)
        .map(|i| ((scale * (i as f64).powf(-exponent)).round() as u64).max(1))
        .collect()
}

pub fn count_demo(cfg: &RunConfig) -> Result<CountDemoReport> {
    cfg.validate()?;
    let encoder = FeatureEncoder::new(&cfg.env, cfg.policy.window);
    let policy = initial_policy(cfg)?;

    // Stream states: enumerated non-root states in breadth-first order. One
    // extra state is held out entirely to probe novelty.
    let enumerated = enumerate_reachable(&cfg.env, DEFAULT_ENUMERATION_CAP)?;
    let candidates: Vec<State> = enumerated
        .into_iter()
        .map(|(s, _)| s)
        .filter(|s| !s.tokens.is_empty())
        .collect();
    if candidates.len() < 2 {
        return Err(Error::config(
            "environment too small for the count demo; need at least 2 non-root states",
        ));
    }
    let n_states = candidates.len().saturating_sub(1).min(100);
    let stream_states = &candidates[..n_states];
    let holdout = &candidates[n_states];
    let counts = zipf_counts(n_states, ZIPF_SCALE, ZIPF_EXPONENT);

    // Expand to a visit stream, shuffle, and attach fresh labels.
    let mut visits: Vec<usize> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        visits.extend(std::iter::repeat_n(i, c as usize));
    }
    let mut rng = derive_rng(cfg.train.seed, "count-demo", &[]);
    shuffle(&mut visits, &mut rng);
    let features: Vec<StateFeatures> = stream_states.iter().map(|s| encoder.encode(s)).collect();
    let pairs: Vec<(StateFeatures, Vec<f64>)> = visits
        .iter()
        .map(|&i| {
            (
                features[i].clone(),
                cfn::rademacher_label(cfg.cfn.d, &mut rng),
            )
        })
        .collect();

    // Spend the step budget in three stages with decaying rates; constant
    //-rate training stalls at a gradient-noise floor short of the
    // least-squares plateau the count identity needs.
    let mut model = CfnModel::from_policy_trunk(
        &policy,
        cfg.cfn.d,
        derive_seed(cfg.train.seed, "cfn-head", &[]),
        cfg.cfn.lr_pretrain,
    )?;
    let budget = cfg.cfn.pretrain_steps;
    let stages = [
        (cfg.cfn.lr_pretrain, budget * 6 / 10),
        (cfg.cfn.lr_pretrain / 10.0, budget * 25 / 100),
        (cfg.cfn.lr_pretrain / 100.0, budget - budget * 6 / 10 - budget * 25 / 100),
    ];
    for (lr, stage_steps) in stages {
        model.opt.learning_rate = lr;
        let mut steps = 0usize;
        'stage: loop {
            for chunk in pairs.chunks(cfg.cfn.minibatch) {
                if steps >= stage_steps {
                    break 'stage;
                }
                let batch = CfnBatch::new(chunk.to_vec())?;
                let (next, _) = cfn::train_step(&model, &batch)?;
                model = next;
                steps += 1;
            }
            if pairs.is_empty() {
                break;
            }
        }
    }

    let mut rows = Vec::with_capacity(n_states);
    let mut estimated_inv = Vec::with_capacity(n_states);
    let mut true_inv = Vec::with_capacity(n_states);
    for (state, (&count, f)) in stream_states.iter().zip(counts.iter().zip(&features)) {
        let est = cfn::inverse_count(&model, f)?;
        rows.push(StateCountRow {
            tokens: state.tokens.clone(),
            true_count: count,
            estimated_count: 1.0 / est.inverse_count,
            inverse_count: est.inverse_count,
        });
        estimated_inv.push(est.inverse_count);
        true_inv.push(1.0 / count as f64);
    }
    let rho = spearman(&estimated_inv, &true_inv);

    let unseen = cfn::inverse_count(&model, &encoder.encode(holdout))?.inverse_count;
    let heavy: Vec<f64> = rows
        .iter()
        .filter(|r| r.true_count >= 16)
        .map(|r| r.inverse_count)
        .collect();
    let median_heavy = if heavy.is_empty() { 0.0 } else { median(&heavy) };

    // Retention statistics for trajectories sampled under the initial
    // policy: the percentile stage keeps ceil(p * l) tokens of each.
    let group = sample_group(
        &policy,
        &cfg.env,
        cfg.policy.window,
        0,
        4.max(cfg.train.group_size),
        derive_seed(cfg.train.seed, "count-demo-rollout", &[]),
    )?;
    let mut retention = Vec::new();
    for traj in &group.trajectories {
        let mut vars = Vec::with_capacity(traj.len);
        for t in 0..traj.len {
            let f = encoder.encode(traj.state_after(t));
            vars.push(cfn::inverse_count(&model, &f)?.variance_hat);
        }
        let kept = percentile_filter(&vars, cfg.filter.top_percentile);
        retention.push((traj.len, kept.len()));
    }

    Ok(CountDemoReport {
        rows,
        spearman: rho,
        unseen_inverse_count: unseen,
        median_heavy_inverse_count: median_heavy,
        retention,
        total_visits: counts.iter().sum(),
    })
}

fn shuffle<T>(xs: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
