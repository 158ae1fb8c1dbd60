//! Bonus-model pretraining and the main training loop.
//!
//! Each iteration follows a fixed order: sample rollout groups, compute
//! group-normalized outcome advantages, encode token features, estimate
//! per-token variances and aggregate the filtered trajectory bonus,
//! integrate it into the advantages under the scheduled coefficient, update
//! the bonus model on fresh labels, then update the policy. Every random
//! draw comes from a stream derived from the master seed, the purpose, and
//! the iteration, so reruns are byte-identical and paired configurations
//! share their sampling luck.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;

use crate::cfn::{self, CfnBatch, CfnModel, ExactCounter};
use crate::config::RunConfig;
use crate::env::StateKey;
use crate::error::{Error, Result};
use crate::net::{NetParams, OptimKind, OptimState};
use crate::policy::{
    sample_group, surrogate_update, FeatureEncoder, RolloutGroup, StateFeatures, SurrogateConfig,
};
use crate::rng::{derive_rng, derive_seed};
use crate::shaping::{self, ShapedGroup};

use super::metrics::{MetricsWriter, StepRecord};
use super::{
    prepare_run_dir, save_cfn, save_net, CFN_CHECKPOINT, CFN_PRETRAINED_CHECKPOINT,
    POLICY_CHECKPOINT, POLICY_INIT_CHECKPOINT,
};

/// Phases of one training iteration, in execution order. Observers receive
/// them as they happen; tests use this to pin the loop order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Rollout,
    OutcomeAdvantage,
    Features,
    Bonus,
    Integrate,
    CfnUpdate,
    PolicyUpdate,
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub records: Vec<StepRecord>,
    pub final_policy: NetParams,
    pub final_cfn: CfnModel,
    /// First iteration whose rollout batch contained a correct trajectory.
    pub first_success_iteration: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub steps: usize,
    pub pairs: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub distinct_states: usize,
    /// Exact visit counts of the pretraining stream, keyed by token prefix
    /// and sorted for determinism. Ground truth for count-recovery checks.
    pub state_counts: Vec<(Vec<u32>, u64)>,
}

/// The policy at iteration zero; also the frozen reference for the KL term
/// and the trunk donor for the bonus model. With `zero_init_head` the output
/// layer starts at zero, making the initial token distribution exactly
/// uniform at every state.
pub fn initial_policy(cfg: &RunConfig) -> Result<NetParams> {
    let encoder = FeatureEncoder::new(&cfg.env, cfg.policy.window);
    let mut shape = vec![encoder.dim()];
    shape.extend(&cfg.policy.hidden);
    shape.push(cfg.env.vocab_size as usize);
    let mut params = NetParams::init(&shape, cfg.policy.activation, cfg.train.seed)?;
    if cfg.policy.zero_init_head {
        let head = params.layers.last_mut().expect("non-empty net");
        head.w.data.fill(0.0);
        head.b.fill(0.0);
    }
    Ok(params)
}

fn initial_cfn(cfg: &RunConfig, policy_init: &NetParams, lr: f64) -> Result<CfnModel> {
    CfnModel::from_policy_trunk(policy_init, cfg.cfn.d, derive_seed(cfg.train.seed, "cfn-head", &[]), lr)
}

fn policy_optimizer(cfg: &RunConfig, params: &NetParams) -> Result<OptimState> {
    match cfg.policy.optimizer {
        OptimKind::Sgd => OptimState::sgd(params, cfg.policy.learning_rate),
        OptimKind::AdamW => {
            OptimState::adamw(params, cfg.policy.learning_rate, cfg.policy.weight_decay)
        }
    }
}

/// Rolls the initial policy over the prompt set into a fixed corpus of
/// (features, fresh label) visits, then spends the step budget cycling that
/// corpus to convergence with a decaying rate. The resulting checkpoint
/// seeds the training loop's bonus model.
pub fn pretrain_cfn(cfg: &RunConfig) -> Result<(CfnModel, PretrainReport)> {
    cfg.validate()?;
    let run_dir = prepare_run_dir(cfg)?;
    let policy = initial_policy(cfg)?;
    let mut model = initial_cfn(cfg, &policy, cfg.cfn.lr_pretrain)?;
    let encoder = FeatureEncoder::new(&cfg.env, cfg.policy.window);

    let corpus_size = if cfg.cfn.pretrain_steps == 0 {
        0
    } else {
        cfg.cfn.pretrain_pairs
    };
    let mut pairs: Vec<(StateFeatures, Vec<f64>)> = Vec::with_capacity(corpus_size);
    let mut counter: ExactCounter<StateKey> = ExactCounter::new();
    let mut label_rng = derive_rng(cfg.train.seed, "pretrain-label", &[]);
    let mut rollout_idx = 0u64;
    'collect: while pairs.len() < corpus_size {
        let prompt_id = (rollout_idx % cfg.env.num_prompts as u64) as u32;
        let group = sample_group(
            &policy,
            &cfg.env,
            cfg.policy.window,
            prompt_id,
            2,
            derive_seed(cfg.train.seed, "pretrain-rollout", &[rollout_idx]),
        )?;
        for traj in &group.trajectories {
            for t in 0..traj.len {
                if pairs.len() >= corpus_size {
                    break 'collect;
                }
                let state = traj.state_after(t);
                counter.visit(state.key());
                pairs.push((
                    encoder.encode(state),
                    cfn::rademacher_label(cfg.cfn.d, &mut label_rng),
                ));
            }
        }
        rollout_idx += 1;
    }

    let mut first_loss = 0.0;
    let mut final_loss = 0.0;
    let mut steps = 0usize;
    let budget = cfg.cfn.pretrain_steps;
    let stages = [
        (cfg.cfn.lr_pretrain, budget * 6 / 10),
        (cfg.cfn.lr_pretrain / 10.0, budget * 25 / 100),
        (
            cfg.cfn.lr_pretrain / 100.0,
            budget - budget * 6 / 10 - budget * 25 / 100,
        ),
    ];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut order_rng = derive_rng(cfg.train.seed, "pretrain-order", &[]);
    'train: for (lr, stage_steps) in stages {
        if pairs.is_empty() {
            break;
        }
        model.opt.learning_rate = lr;
        let mut stage_done = 0usize;
        while stage_done < stage_steps {
            for i in (1..order.len()).rev() {
                let j = order_rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(cfg.cfn.minibatch) {
                if stage_done >= stage_steps {
                    continue 'train;
                }
                let batch: Vec<(StateFeatures, Vec<f64>)> =
                    chunk.iter().map(|&i| pairs[i].clone()).collect();
                let (next, loss) = cfn::train_step(&model, &CfnBatch::new(batch)?)?;
                model = next;
                if steps == 0 {
                    first_loss = loss;
                }
                final_loss = loss;
                steps += 1;
                stage_done += 1;
            }
        }
    }

    let path = run_dir.join("checkpoints").join(CFN_PRETRAINED_CHECKPOINT);
    save_cfn(&path, &model)?;
    let mut state_counts: Vec<(Vec<u32>, u64)> = counter
        .entries()
        .map(|(k, v)| (k.tokens.clone(), v))
        .collect();
    state_counts.sort();
    let report = PretrainReport {
        steps,
        pairs: pairs.len(),
        first_loss,
        final_loss,
        distinct_states: counter.distinct(),
        state_counts,
    };
    Ok((model, report))
}

/// Runs the full training loop, writing `metrics.jsonl`, `timings.jsonl`,
/// and checkpoints into the run directory.
pub fn train(cfg: &RunConfig) -> Result<RunArtifacts> {
    train_observed(cfg, |_, _| {})
}

/// [`train`] with a phase observer called as `(iteration, phase)`.
pub fn train_observed(
    cfg: &RunConfig,
    mut observe: impl FnMut(u64, TrainPhase),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let run_dir = prepare_run_dir(cfg)?;
    let checkpoints = run_dir.join("checkpoints");
    let encoder = FeatureEncoder::new(&cfg.env, cfg.policy.window);

    let policy_init = initial_policy(cfg)?;
    save_net(&checkpoints.join(POLICY_INIT_CHECKPOINT), &policy_init)?;
    let mut policy = policy_init.clone();
    let mut policy_opt = policy_optimizer(cfg, &policy)?;
    let surrogate_cfg = SurrogateConfig {
        eps_low: cfg.surrogate.eps_low,
        eps_high: cfg.surrogate.eps_high,
        beta_kl: cfg.surrogate.beta_kl,
        token_level_loss: cfg.surrogate.token_level_loss,
        ref_params: policy_init.clone(),
    };

    let pretrained_path = checkpoints.join(CFN_PRETRAINED_CHECKPOINT);
    let mut cfn_model = if pretrained_path.exists() {
        super::load_cfn(&pretrained_path)?.with_learning_rate(cfg.cfn.lr_rl)
    } else if cfg.train.allow_fresh_cfn {
        initial_cfn(cfg, &policy_init, cfg.cfn.lr_rl)?
    } else {
        return Err(Error::config(format!(
            "no pretrained bonus checkpoint at {}; run pretrain-cfn first or set train.allow_fresh_cfn",
            pretrained_path.display()
        )));
    };

    let mut writer = MetricsWriter::create(&run_dir)?;
    let mut records = Vec::with_capacity(cfg.train.iterations as usize);
    let mut visit_counter: ExactCounter<StateKey> = ExactCounter::new();
    let mut first_success = None;

    for t in 1..=cfg.train.iterations {
        let started = Instant::now();
        let gamma = shaping::gamma_schedule(t, &cfg.shaping);

        // Rollout phase; in DAPO mode degenerate groups are resampled with
        // fresh derived streams up to the retry cap.
        observe(t, TrainPhase::Rollout);
        let mut groups: Vec<RolloutGroup> = Vec::with_capacity(cfg.train.prompts_per_step);
        for slot in 0..cfg.train.prompts_per_step {
            let prompt_id = (slot % cfg.env.num_prompts as usize) as u32;
            let mut group = sample_group(
                &policy,
                &cfg.env,
                cfg.policy.window,
                prompt_id,
                cfg.train.group_size,
                derive_seed(cfg.train.seed, "rollout", &[t, slot as u64, 0]),
            )?;
            if cfg.dapo.enabled {
                let mut retry = 0;
                while shaping::is_degenerate(&group) && retry < cfg.dapo.resample_retry_cap {
                    retry += 1;
                    group = sample_group(
                        &policy,
                        &cfg.env,
                        cfg.policy.window,
                        prompt_id,
                        cfg.train.group_size,
                        derive_seed(cfg.train.seed, "rollout", &[t, slot as u64, retry as u64]),
                    )?;
                }
            }
            groups.push(group);
        }

        let all_rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.clone()).collect();
        let n_rollouts = all_rewards.len();
        let successes = all_rewards
            .iter()
            .filter(|&&r| r == cfg.env.reward_correct)
            .count();
        if successes > 0 && first_success.is_none() {
            first_success = Some(t);
        }

        // Outcome advantages come from (possibly length-shaped) rewards.
        observe(t, TrainPhase::OutcomeAdvantage);
        let (groups, shaped_rewards) = if cfg.dapo.enabled {
            let (retained, rewards) = shaping::dapo_adjust(groups, &cfg.dapo.limits());
            if retained.is_empty() {
                eprintln!("iteration {t}: every group degenerate after retries; skipping update");
            }
            (retained, rewards)
        } else {
            let rewards = groups.iter().map(|g| g.rewards.clone()).collect();
            (groups, rewards)
        };

        // Token features and per-token variance estimates.
        observe(t, TrainPhase::Features);
        let mut token_vars: Vec<Vec<Vec<f64>>> = Vec::with_capacity(groups.len());
        let mut token_features: Vec<Vec<Vec<StateFeatures>>> = Vec::with_capacity(groups.len());
        for group in &groups {
            let mut group_vars = Vec::with_capacity(group.size());
            let mut group_feats = Vec::with_capacity(group.size());
            for traj in &group.trajectories {
                let mut vars = Vec::with_capacity(traj.len);
                let mut feats = Vec::with_capacity(traj.len);
                for tok in 0..traj.len {
                    let state = traj.state_after(tok);
                    visit_counter.visit(state.key());
                    let f = encoder.encode(state);
                    vars.push(cfn::inverse_count(&cfn_model, &f)?.variance_hat);
                    feats.push(f);
                }
                group_vars.push(vars);
                group_feats.push(feats);
            }
            token_vars.push(group_vars);
            token_features.push(group_feats);
        }

        // Filtered trajectory bonuses, then capped integration.
        observe(t, TrainPhase::Bonus);
        let mut shaped: Vec<ShapedGroup> = Vec::with_capacity(groups.len());
        for ((group, rewards), vars) in groups.iter().zip(&shaped_rewards).zip(&token_vars) {
            shaped.push(shaping::shape_group(
                group,
                rewards,
                vars,
                gamma,
                &cfg.filter,
                &cfg.shaping,
            )?);
        }
        observe(t, TrainPhase::Integrate);

        // Bonus model regression on fresh labels for this iteration's
        // visited states.
        observe(t, TrainPhase::CfnUpdate);
        let mut label_rng = derive_rng(cfg.train.seed, "cfn-label", &[t]);
        let mut pairs: Vec<(StateFeatures, Vec<f64>)> = Vec::new();
        for group_feats in &token_features {
            for traj_feats in group_feats {
                for f in traj_feats {
                    pairs.push((f.clone(), cfn::rademacher_label(cfg.cfn.d, &mut label_rng)));
                }
            }
        }
        let mut cfn_loss_sum = 0.0;
        let mut cfn_steps = 0usize;
        for _ in 0..cfg.cfn.passes_per_iter {
            for chunk in pairs.chunks(cfg.cfn.minibatch) {
                let batch = CfnBatch::new(chunk.to_vec())?;
                let (next, loss) = cfn::train_step(&cfn_model, &batch)?;
                cfn_model = next;
                cfn_loss_sum += loss;
                cfn_steps += 1;
            }
        }
        let cfn_loss = if cfn_steps == 0 {
            0.0
        } else {
            cfn_loss_sum / cfn_steps as f64
        };

        // Policy ascent on the shaped advantages.
        observe(t, TrainPhase::PolicyUpdate);
        let mut clip_fraction = 0.0;
        let mut exact_kl = 0.0;
        if !groups.is_empty() {
            let advantages: Vec<_> = shaped.iter().map(|s| s.token_advantages.clone()).collect();
            let (new_policy, new_opt, diag) = surrogate_update(
                &policy,
                &groups,
                &advantages,
                &surrogate_cfg,
                &policy_opt,
                &encoder,
            )
            .inspect_err(|_e| {
                let _ = writer.flush();
            })?;
            policy = new_policy;
            policy_opt = new_opt;
            clip_fraction = diag.clip_fraction;
            exact_kl = diag.exact_kl;
        }

        let bonuses: Vec<f64> = shaped.iter().flat_map(|s| s.b.clone()).collect();
        let retained_fraction = {
            let mut kept = 0usize;
            let mut total = 0usize;
            for (s, g) in shaped.iter().zip(&groups) {
                for (r, traj) in s.retained.iter().zip(&g.trajectories) {
                    kept += r.len();
                    total += traj.len;
                }
            }
            if total == 0 {
                0.0
            } else {
                kept as f64 / total as f64
            }
        };
        let record = StepRecord {
            iteration: t,
            mean_outcome_reward: crate::stats::mean(&all_rewards),
            success_rate: if n_rollouts == 0 {
                0.0
            } else {
                successes as f64 / n_rollouts as f64
            },
            mean_bonus: crate::stats::mean(&bonuses),
            max_bonus: bonuses.iter().cloned().fold(0.0, f64::max),
            retained_fraction,
            gamma,
            clip_fraction,
            exact_kl,
            cfn_loss,
            distinct_states: visit_counter.distinct() as u64,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        writer.append(&record)?;
        records.push(record);
    }

    writer.flush()?;
    save_net(&checkpoints.join(POLICY_CHECKPOINT), &policy)?;
    save_cfn(&checkpoints.join(CFN_CHECKPOINT), &cfn_model)?;
    Ok(RunArtifacts {
        run_dir,
        records,
        final_policy: policy,
        final_cfn: cfn_model,
        first_success_iteration: first_success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, EnvSpec};

    fn tiny_config(dir: &std::path::Path) -> RunConfig {
        let env = EnvSpec::new(EnvKind::ChainLock, 2, 3, vec![1, 1, 1]).unwrap();
        let mut cfg: RunConfig = serde_json::from_str(&format!(
            r#"{{
                "env": {},
                "train": {{"iterations": 4, "group_size": 4, "prompts_per_step": 2,
                           "seed": 11, "output_dir": {:?}, "allow_fresh_cfn": true}}
            }}"#,
            serde_json::to_string(&env).unwrap(),
            dir.join("run").to_str().unwrap()
        ))
        .unwrap();
        cfg.policy.hidden = vec![8];
        cfg.policy.window = 2;
        cfg.cfn.pretrain_steps = 10;
        cfg
    }

    #[test]
    fn train_emits_one_record_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let artifacts = train(&cfg).unwrap();
        assert_eq!(artifacts.records.len(), 4);
        for (i, r) in artifacts.records.iter().enumerate() {
            assert_eq!(r.iteration, i as u64 + 1);
            assert!(r.is_finite());
        }
        assert!(artifacts.run_dir.join("metrics.jsonl").exists());
        assert!(artifacts.run_dir.join("config.resolved.json").exists());
        assert!(artifacts
            .run_dir
            .join("checkpoints")
            .join(POLICY_CHECKPOINT)
            .exists());
    }

    #[test]
    fn loop_order_follows_the_algorithm() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.train.iterations = 2;
        let mut phases: Vec<(u64, TrainPhase)> = Vec::new();
        train_observed(&cfg, |t, p| phases.push((t, p))).unwrap();
        let expected = [
            TrainPhase::Rollout,
            TrainPhase::OutcomeAdvantage,
            TrainPhase::Features,
            TrainPhase::Bonus,
            TrainPhase::Integrate,
            TrainPhase::CfnUpdate,
            TrainPhase::PolicyUpdate,
        ];
        assert_eq!(phases.len(), 2 * expected.len());
        for t in 1..=2u64 {
            let slice: Vec<TrainPhase> = phases
                .iter()
                .filter(|(it, _)| *it == t)
                .map(|(_, p)| *p)
                .collect();
            assert_eq!(slice, expected);
        }
    }

    #[test]
    fn pretrain_checkpoint_feeds_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.train.allow_fresh_cfn = false;
        // Without the checkpoint training refuses to start.
        assert!(matches!(train(&cfg), Err(Error::Config(_))));
        let (_, report) = pretrain_cfn(&cfg).unwrap();
        assert!(report.pairs > 0);
        assert!(report.distinct_states > 0);
        train(&cfg).unwrap();
    }

    #[test]
    fn zero_budget_pretrain_keeps_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.cfn.pretrain_steps = 0;
        let (model, report) = pretrain_cfn(&cfg).unwrap();
        assert_eq!(report.pairs, 0);
        let fresh = initial_cfn(&cfg, &initial_policy(&cfg).unwrap(), cfg.cfn.lr_pretrain).unwrap();
        assert_eq!(model.net, fresh.net);
    }

    #[test]
    fn pretrained_estimates_rank_visit_frequencies() {
        // Uniform play on the early-stop lock visits shallow prefixes
        // exponentially more often than deep ones; after pretraining the
        // estimated inverse counts must rank-match the exact counter.
        let dir = tempfile::tempdir().unwrap();
        let env = EnvSpec::new(EnvKind::ChainLock, 2, 6, vec![1; 6]).unwrap();
        let mut cfg: RunConfig = serde_json::from_str(&format!(
            r#"{{
                "env": {},
                "train": {{"iterations": 1, "seed": 2, "output_dir": {:?}}}
            }}"#,
            serde_json::to_string(&env).unwrap(),
            dir.path().join("pretrain").to_str().unwrap()
        ))
        .unwrap();
        // The window spans the horizon so every prefix has its own feature
        // vector; smaller windows deliberately alias deep prefixes together
        // and pool their counts.
        cfg.policy.hidden = vec![48];
        cfg.policy.window = 6;
        cfg.cfn.lr_pretrain = 3e-3;
        cfg.cfn.minibatch = 128;
        cfg.cfn.pretrain_steps = 2400;
        let (model, report) = pretrain_cfn(&cfg).unwrap();
        let encoder = FeatureEncoder::new(&cfg.env, cfg.policy.window);
        let mut est = Vec::new();
        let mut truth = Vec::new();
        for (tokens, count) in &report.state_counts {
            let state = crate::env::State {
                prompt_id: 0,
                tokens: tokens.clone(),
                step: tokens.len() + 1,
            };
            est.push(
                cfn::inverse_count(&model, &encoder.encode(&state))
                    .unwrap()
                    .inverse_count,
            );
            truth.push(1.0 / *count as f64);
        }
        let rho = crate::stats::spearman(&est, &truth);
        assert!(rho >= 0.8, "spearman {rho} over {} states", est.len());
    }

    #[test]
    fn zero_gamma_runs_are_vanilla_regardless_of_filters() {
        // With the coefficient pinned at zero the bonus path cannot touch
        // the advantages, so runs differing only in filter settings follow
        // the same policy trajectory step for step.
        let dir = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir.path());
        cfg_a.shaping.gamma_max = 0.0;
        cfg_a.train.iterations = 6;
        cfg_a.train.output_dir = dir.path().join("a").to_str().unwrap().to_string();
        let mut cfg_b = cfg_a.clone();
        cfg_b.filter.top_percentile = 1.0;
        cfg_b.filter.min_run = 1;
        cfg_b.shaping.literal_eq8 = false;
        cfg_b.train.output_dir = dir.path().join("b").to_str().unwrap().to_string();
        let a = train(&cfg_a).unwrap();
        let b = train(&cfg_b).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.mean_outcome_reward, rb.mean_outcome_reward);
            assert_eq!(ra.success_rate, rb.success_rate);
            assert_eq!(ra.clip_fraction, rb.clip_fraction);
            assert_eq!(ra.exact_kl, rb.exact_kl);
            assert_eq!(ra.distinct_states, rb.distinct_states);
        }
        assert_eq!(a.first_success_iteration, b.first_success_iteration);
        for (la, lb) in a.final_policy.layers.iter().zip(&b.final_policy.layers) {
            assert_eq!(la.w.data, lb.w.data);
            assert_eq!(la.b, lb.b);
        }
    }

    #[test]
    fn dapo_mode_trains_and_resamples() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.dapo.enabled = true;
        cfg.dapo.resample_retry_cap = 2;
        cfg.dapo.soft_length_limit = Some(2);
        cfg.dapo.penalty_slope = 0.1;
        cfg.surrogate.beta_kl = 0.0;
        cfg.surrogate.eps_high = 0.28;
        cfg.surrogate.token_level_loss = true;
        cfg.train.output_dir = dir.path().join("dapo").to_str().unwrap().to_string();
        let artifacts = train(&cfg).unwrap();
        assert_eq!(artifacts.records.len(), cfg.train.iterations as usize);
        assert!(artifacts.records.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn deterministic_given_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir.path());
        cfg_a.train.output_dir = dir.path().join("a").to_str().unwrap().to_string();
        let mut cfg_b = cfg_a.clone();
        cfg_b.train.output_dir = dir.path().join("b").to_str().unwrap().to_string();
        let (_, ra) = pretrain_cfn(&cfg_a).unwrap();
        let (_, rb) = pretrain_cfn(&cfg_b).unwrap();
        assert_eq!(ra.final_loss, rb.final_loss);
        let a = train(&cfg_a).unwrap();
        let b = train(&cfg_b).unwrap();
        let ma = std::fs::read(a.run_dir.join("metrics.jsonl")).unwrap();
        let mb = std::fs::read(b.run_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(ma, mb);
    }
}
