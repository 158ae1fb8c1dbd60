//! Advantage shaping: group-normalized outcome advantages, the three-stage
//! token filter, trajectory bonuses, standardization, capped integration,
//! the exploration-coefficient schedule, and the DAPO batch adjustments.
//!
//! Everything here is a pure per-group transform; groups shape independently.

use serde::{Deserialize, Serialize};

use crate::cfn::{INVERSE_COUNT_CEIL, INVERSE_COUNT_FLOOR};
use crate::error::{Error, Result};
use crate::policy::RolloutGroup;
use crate::stats::{mean, pop_std};
use crate::uncertainty::{trajectory_bonus, BonusMode};

/// Token-class predicates for the noise-suppression stage. Which rules make
/// sense varies by task, so they arrive from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseRule {
    /// Drop retained tokens equal to a designated filler token.
    Filler { token: u32 },
    /// Drop retained tokens inside a run of `min_len` or more identical
    /// consecutive tokens.
    RepeatRun { min_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Fraction of tokens retained by the percentile stage, in (0, 1].
    pub top_percentile: f64,
    /// Minimum length of a consecutive run that survives the coherence stage.
    pub min_run: usize,
    #[serde(default)]
    pub noise_rules: Vec<NoiseRule>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            top_percentile: 0.30,
            min_run: 3,
            noise_rules: Vec::new(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_percentile > 0.0 && self.top_percentile <= 1.0) {
            return Err(Error::config("top_percentile must lie in (0, 1]"));
        }
        if self.min_run == 0 {
            return Err(Error::config("min_run must be >= 1"));
        }
        for rule in &self.noise_rules {
            if let NoiseRule::RepeatRun { min_len } = rule {
                if *min_len < 2 {
                    return Err(Error::config("repeat_run min_len must be >= 2"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSchedule {
    pub t_start_decay: u64,
    pub t_end_decay: u64,
    pub beta_floor: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule {
            t_start_decay: 10,
            t_end_decay: 200,
            beta_floor: 0.1,
        }
    }
}

/// Shaping behavior, including the one-flag ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingConfig {
    /// Peak exploration coefficient the schedule warms up to.
    pub gamma_max: f64,
    /// Cap factor on the augmented advantage, in (0, 1).
    pub alpha: f64,
    #[serde(default)]
    pub schedule: GammaSchedule,
    /// Divide the bonus aggregation by trajectory length.
    #[serde(default = "default_true")]
    pub normalize_by_length: bool,
    /// Apply the capped-integration formula verbatim even when the bonus
    /// term is zero. Disabling skips the formula entirely in that case.
    /// Both settings coincide numerically (the min already returns the old
    /// advantage when the bonus term vanishes); the flag exists to make the
    /// vanilla-equivalence of zero-gamma runs explicit in the config.
    #[serde(default = "default_true")]
    pub literal_eq8: bool,
    /// Ablation: skip the percentile and coherence stages.
    #[serde(default)]
    pub no_ps_filtering: bool,
    /// Ablation: skip the noise-suppression stage.
    #[serde(default)]
    pub no_noise_filtering: bool,
    /// Ablation: sum per-token standard deviations instead of variances.
    #[serde(default)]
    pub cumulative_std: bool,
    /// Ablation: integrate a standardized bonus per token instead of one
    /// trajectory-level bonus.
    #[serde(default)]
    pub token_integration: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            gamma_max: 0.4,
            alpha: 0.5,
            schedule: GammaSchedule::default(),
            normalize_by_length: true,
            literal_eq8: true,
            no_ps_filtering: false,
            no_noise_filtering: false,
            cumulative_std: false,
            token_integration: false,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_max < 0.0 {
            return Err(Error::config("gamma_max must be >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if self.schedule.t_start_decay >= self.schedule.t_end_decay {
            return Err(Error::config("t_start_decay must precede t_end_decay"));
        }
        if !(0.0..=1.0).contains(&self.schedule.beta_floor) {
            return Err(Error::config("beta_floor must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn bonus_mode(&self) -> BonusMode {
        if self.cumulative_std {
            BonusMode::CumulativeStd
        } else {
            BonusMode::CumulativeVariance
        }
    }
}

/// Group-normalized advantages `(R_i - mean) / std` with population std.
/// A zero-spread group carries no signal and maps to all zeros.
pub fn group_advantage(rewards: &[f64]) -> Vec<f64> {
    let m = mean(rewards);
    let s = pop_std(rewards);
    if s == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - m) / s).collect()
}

/// Indices of the top `ceil(p * l)` bonuses within one response, ties broken
/// toward earlier positions. Returned sorted ascending.
pub fn percentile_filter(bonuses: &[f64], p: f64) -> Vec<usize> {
    if bonuses.is_empty() {
        return Vec::new();
    }
    let keep = ((p * bonuses.len() as f64).ceil() as usize).clamp(1, bonuses.len());
    let mut order: Vec<usize> = (0..bonuses.len()).collect();
    order.sort_by(|&a, &b| {
        bonuses[b]
            .partial_cmp(&bonuses[a])
            .expect("bonus NaN")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

/// Keeps only indices inside maximal runs of consecutive positions of length
/// at least `min_run`; isolated spikes are discarded.
pub fn coherence_filter(indices: &[usize], min_run: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run_start = 0usize;
    let mut i = 0usize;
    while i < indices.len() {
        let run_end = i;
        if i + 1 < indices.len() && indices[i + 1] == indices[i] + 1 {
            i += 1;
            continue;
        }
        if run_end - run_start + 1 >= min_run {
            out.extend_from_slice(&indices[run_start..=run_end]);
        }
        i += 1;
        run_start = i;
    }
    out
}

/// Drops indices whose token matches any noise predicate.
pub fn noise_filter(indices: &[usize], tokens: &[u32], rules: &[NoiseRule]) -> Vec<usize> {
    if rules.is_empty() {
        return indices.to_vec();
    }
    // Mark positions sitting inside long identical-token runs once.
    let repeat_min = rules
        .iter()
        .filter_map(|r| match r {
            NoiseRule::RepeatRun { min_len } => Some(*min_len),
            _ => None,
        })
        .min();
    let mut in_repeat = vec![false; tokens.len()];
    if let Some(min_len) = repeat_min {
        let mut start = 0;
        for i in 0..=tokens.len() {
            if i == tokens.len() || (i > start && tokens[i] != tokens[start]) {
                if i - start >= min_len {
                    in_repeat[start..i].iter_mut().for_each(|v| *v = true);
                }
                start = i;
            }
        }
    }
    indices
        .iter()
        .copied()
        .filter(|&i| {
            !rules.iter().any(|rule| match rule {
                NoiseRule::Filler { token } => tokens[i] == *token,
                NoiseRule::RepeatRun { .. } => in_repeat[i],
            })
        })
        .collect()
}

/// Composes the filter stages with the ablation flags applied.
pub fn retained_indices(
    bonuses: &[f64],
    tokens: &[u32],
    filter: &FilterConfig,
    shaping: &ShapingConfig,
) -> Vec<usize> {
    let mut indices: Vec<usize> = if shaping.no_ps_filtering {
        (0..bonuses.len()).collect()
    } else {
        coherence_filter(
            &percentile_filter(bonuses, filter.top_percentile),
            filter.min_run,
        )
    };
    if !shaping.no_noise_filtering {
        indices = noise_filter(&indices, tokens, &filter.noise_rules);
    }
    indices
}

/// Trajectory bonus from raw per-token model outputs: each output becomes a
/// clamped `(1/d)||f||^2` variance, then the retained set aggregates under
/// the configured mode.
pub fn trajectory_bonus_from_cfn(
    outputs: &[Vec<f64>],
    l: usize,
    d: usize,
    cfg: &ShapingConfig,
) -> Result<f64> {
    let variances: Vec<f64> = outputs
        .iter()
        .map(|f| {
            (f.iter().map(|v| v * v).sum::<f64>() / d as f64)
                .clamp(INVERSE_COUNT_FLOOR, INVERSE_COUNT_CEIL)
        })
        .collect();
    trajectory_bonus(&variances, l, cfg.bonus_mode(), cfg.normalize_by_length)
}

/// Group-standardized bonuses with negatives truncated to zero; all zeros
/// when the group has no spread.
pub fn standardize_bonuses(bonuses: &[f64]) -> Vec<f64> {
    let m = mean(bonuses);
    let s = pop_std(bonuses);
    if s == 0.0 {
        return vec![0.0; bonuses.len()];
    }
    bonuses.iter().map(|b| ((b - m) / s).max(0.0)).collect()
}

/// Capped integration of the exploration bonus into the outcome advantage,
/// applied verbatim:
///
/// - `a_old >= 0`: `min(a_old + gamma * a_exp, (1 + alpha) * a_old)`
/// - `a_old <  0`: `min(a_old + gamma * a_exp, (1 - alpha) * a_old)`
///
/// Negative advantages shrink by at most a factor of `1 - alpha` and never
/// change sign.
pub fn integrate_bonus(a_old: f64, a_exploration: f64, gamma: f64, alpha: f64) -> f64 {
    let boosted = a_old + gamma * a_exploration;
    if a_old >= 0.0 {
        boosted.min((1.0 + alpha) * a_old)
    } else {
        boosted.min((1.0 - alpha) * a_old)
    }
}

/// [`integrate_bonus`] with the configured zero-bonus handling: when the
/// formula is not taken literally, a zero `gamma * a_exp` skips it and
/// returns the advantage untouched (the literal formula lands on the same
/// value; see the tests).
pub fn apply_integration(
    a_old: f64,
    a_exploration: f64,
    gamma: f64,
    alpha: f64,
    literal: bool,
) -> f64 {
    if !literal && gamma * a_exploration == 0.0 {
        return a_old;
    }
    integrate_bonus(a_old, a_exploration, gamma, alpha)
}

/// Warm-up then cosine decay for the exploration coefficient: linear ramp to
/// `gamma_max` over the first `t_start_decay` iterations, cosine decay to
/// `beta_floor * gamma_max` by `t_end_decay`, constant afterwards.
pub fn gamma_schedule(t_iter: u64, cfg: &ShapingConfig) -> f64 {
    let s = &cfg.schedule;
    if t_iter <= s.t_start_decay {
        return cfg.gamma_max * t_iter as f64 / s.t_start_decay as f64;
    }
    let t = t_iter.min(s.t_end_decay) as f64;
    let span = (s.t_end_decay - s.t_start_decay) as f64;
    let phase = std::f64::consts::PI * (t - s.t_start_decay as f64) / span;
    s.beta_floor * cfg.gamma_max
        + (1.0 - s.beta_floor) * cfg.gamma_max * 0.5 * (1.0 + phase.cos())
}

/// Length limits for the overlong-penalty part of the DAPO adjustments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DapoLimits {
    /// Lengths beyond this soft cap are penalized linearly.
    pub soft_length_limit: Option<usize>,
    #[serde(default)]
    pub penalty_slope: f64,
}

/// True when every reward in the group is identical, i.e. the group carries
/// no advantage signal.
pub fn is_degenerate(group: &RolloutGroup) -> bool {
    group.rewards.windows(2).all(|w| w[0] == w[1])
}

/// Dynamic-sampling drop of zero-signal groups plus overlong reward shaping.
/// Returns the retained groups and their shaped terminal rewards. Resampling
/// replacements for dropped groups is the training loop's job.
pub fn dapo_adjust(
    groups: Vec<RolloutGroup>,
    limits: &DapoLimits,
) -> (Vec<RolloutGroup>, Vec<Vec<f64>>) {
    let retained: Vec<RolloutGroup> = groups.into_iter().filter(|g| !is_degenerate(g)).collect();
    let rewards = retained
        .iter()
        .map(|g| {
            g.trajectories
                .iter()
                .map(|t| {
                    let mut r = t.terminal_reward;
                    if let Some(cap) = limits.soft_length_limit {
                        if t.len > cap {
                            r -= limits.penalty_slope * (t.len - cap) as f64;
                        }
                    }
                    r
                })
                .collect()
        })
        .collect();
    (retained, rewards)
}

/// Everything the shaping pipeline produced for one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapedGroup {
    /// Group-normalized outcome advantages.
    pub a_old: Vec<f64>,
    /// Trajectory-level bonuses.
    pub b: Vec<f64>,
    /// Standardized, truncated bonuses (never negative).
    pub a_exploration: Vec<f64>,
    /// Integrated trajectory advantages (equals `a_old` under the per-token
    /// integration ablation, where shaping happens token-wise instead).
    pub a_new: Vec<f64>,
    /// Retained token indices per trajectory.
    pub retained: Vec<Vec<usize>>,
    /// Per-token advantages the policy update consumes.
    pub token_advantages: Vec<Vec<f64>>,
}

/// Full shaping pipeline for one rollout group: outcome advantages, token
/// filtering, bonus aggregation, standardization, and capped integration.
/// `token_variances` holds the clamped per-token variance estimates aligned
/// with each trajectory's tokens; `rewards` are the (possibly DAPO-shaped)
/// terminal rewards.
pub fn shape_group(
    group: &RolloutGroup,
    rewards: &[f64],
    token_variances: &[Vec<f64>],
    gamma: f64,
    filter: &FilterConfig,
    cfg: &ShapingConfig,
) -> Result<ShapedGroup> {
    if rewards.len() != group.size() || token_variances.len() != group.size() {
        return Err(Error::usage("shaping inputs not aligned with group"));
    }
    filter.validate()?;
    cfg.validate()?;
    let a_old = group_advantage(rewards);

    let mut retained = Vec::with_capacity(group.size());
    let mut bonuses = Vec::with_capacity(group.size());
    for (traj, vars) in group.trajectories.iter().zip(token_variances) {
        if vars.len() != traj.len {
            return Err(Error::usage("token variances not aligned with trajectory"));
        }
        let kept = retained_indices(vars, &traj.actions, filter, cfg);
        let kept_vars: Vec<f64> = kept.iter().map(|&i| vars[i]).collect();
        let b = trajectory_bonus(
            &kept_vars,
            traj.len.max(1),
            cfg.bonus_mode(),
            cfg.normalize_by_length,
        )?;
        retained.push(kept);
        bonuses.push(b);
    }
    let a_exploration = standardize_bonuses(&bonuses);

    let (a_new, token_advantages) = if cfg.token_integration {
        // Ablation: standardize retained per-token values across the whole
        // group and integrate each token separately.
        let mut raw: Vec<Vec<f64>> = group
            .trajectories
            .iter()
            .map(|t| vec![0.0; t.len])
            .collect();
        for (ti, kept) in retained.iter().enumerate() {
            for &i in kept {
                raw[ti][i] = token_variances[ti][i];
            }
        }
        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let m = mean(&flat);
        let s = pop_std(&flat);
        let token_advantages: Vec<Vec<f64>> = raw
            .iter()
            .enumerate()
            .map(|(ti, vals)| {
                vals.iter()
                    .map(|&v| {
                        let std_bonus = if s == 0.0 { 0.0 } else { ((v - m) / s).max(0.0) };
                        apply_integration(a_old[ti], std_bonus, gamma, cfg.alpha, cfg.literal_eq8)
                    })
                    .collect()
            })
            .collect();
        (a_old.clone(), token_advantages)
    } else {
        let a_new: Vec<f64> = a_old
            .iter()
            .zip(&a_exploration)
            .map(|(&old, &exp)| apply_integration(old, exp, gamma, cfg.alpha, cfg.literal_eq8))
            .collect();
        let token_advantages = group
            .trajectories
            .iter()
            .zip(&a_new)
            .map(|(t, &a)| vec![a; t.len])
            .collect();
        (a_new, token_advantages)
    };

    Ok(ShapedGroup {
        a_old,
        b: bonuses,
        a_exploration,
        a_new,
        retained,
        token_advantages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn group_advantage_hand_values() {
        let adv = group_advantage(&[1.0, 0.0, 0.0, 0.0]);
        let expect = [1.7321, -0.5774, -0.5774, -0.5774];
        for (a, e) in adv.iter().zip(expect) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
        assert_eq!(group_advantage(&[0.5; 6]), vec![0.0; 6]);
        let pair = group_advantage(&[1.0, -1.0]);
        assert!((pair[0] - 1.0).abs() < 1e-12);
        assert!((pair[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_advantage_ranking_is_affine_invariant() {
        let mut rng = crate::rng::derive_rng(3, "shaping-test", &[]);
        for _ in 0..100 {
            let rewards: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let scaled: Vec<f64> = rewards.iter().map(|r| 3.5 * r + 1.25).collect();
            let a = group_advantage(&rewards);
            let b = group_advantage(&scaled);
            let rank = |xs: &[f64]| crate::stats::average_ranks(xs);
            assert_eq!(rank(&a), rank(&rewards));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn percentile_filter_examples() {
        let kept = percentile_filter(&[5.0, 1.0, 4.0, 1.0, 1.0, 3.0, 4.0, 2.0], 0.5);
        assert_eq!(kept, vec![0, 2, 5, 6]);
        let all = percentile_filter(&[1.0, 2.0, 3.0], 1.0);
        assert_eq!(all, vec![0, 1, 2]);
        let half = percentile_filter(&[1.0; 8], 0.5);
        assert_eq!(half.len(), 4);
        assert_eq!(half, vec![0, 1, 2, 3]); // ties break toward earlier tokens
    }

    #[test]
    fn coherence_filter_examples() {
        assert_eq!(coherence_filter(&[0, 2, 5, 6, 7], 3), vec![5, 6, 7]);
        assert_eq!(coherence_filter(&[0, 2, 5, 6, 7], 1), vec![0, 2, 5, 6, 7]);
        assert_eq!(coherence_filter(&[1, 2, 4, 5], 3), Vec::<usize>::new());
    }

    #[test]
    fn noise_filter_examples() {
        // A run of five identical filler tokens disappears.
        let tokens = [3u32, 0, 0, 0, 0, 0, 2];
        let indices: Vec<usize> = (0..7).collect();
        let out = noise_filter(&indices, &tokens, &[NoiseRule::Filler { token: 0 }]);
        assert_eq!(out, vec![0, 6]);
        let repeat = noise_filter(&indices, &tokens, &[NoiseRule::RepeatRun { min_len: 3 }]);
        assert_eq!(repeat, vec![0, 6]);
        // Empty rule set leaves input unchanged.
        assert_eq!(noise_filter(&indices, &tokens, &[]), indices);
        // All noisy => empty.
        let all_filler = noise_filter(&[1, 2, 3], &tokens, &[NoiseRule::Filler { token: 0 }]);
        assert!(all_filler.is_empty());
    }

    #[test]
    fn filter_chain_is_a_subset_chain() {
        let mut rng = crate::rng::derive_rng(17, "filter-fuzz", &[]);
        let rules = [
            NoiseRule::Filler { token: 0 },
            NoiseRule::RepeatRun { min_len: 3 },
        ];
        for _ in 0..1000 {
            let l = rng.random_range(1..40);
            let bonuses: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
            let tokens: Vec<u32> = (0..l).map(|_| rng.random_range(0..4)).collect();
            let p = rng.random_range(0.05..1.0);
            let s1 = percentile_filter(&bonuses, p);
            let s2 = coherence_filter(&s1, 3);
            let s3 = noise_filter(&s2, &tokens, &rules);
            let is_subset = |a: &[usize], b: &[usize]| a.iter().all(|x| b.contains(x));
            assert!(is_subset(&s3, &s2));
            assert!(is_subset(&s2, &s1));
            assert!(s1.len() <= l);
            assert_eq!(s1.len(), ((p * l as f64).ceil() as usize).min(l).max(1));
        }
    }

    #[test]
    fn cfn_bonus_matches_hand_value() {
        // Four retained outputs with (1/d)||f||^2 = 0.25 each, l = 8.
        let d = 4;
        let outputs = vec![vec![0.5, 0.5, 0.5, 0.5]; 4]; // norm^2 = 1.0, /4 = 0.25
        let cfg = ShapingConfig::default();
        let b = trajectory_bonus_from_cfn(&outputs, 8, d, &cfg).unwrap();
        assert!((b - 0.35355339).abs() < 1e-6);
        assert_eq!(
            trajectory_bonus_from_cfn(&[], 8, d, &cfg).unwrap(),
            0.0
        );
        let mut std_cfg = cfg;
        std_cfg.cumulative_std = true;
        let b_std = trajectory_bonus_from_cfn(&outputs, 8, d, &std_cfg).unwrap();
        assert!(b_std > b);
    }

    #[test]
    fn standardize_bonus_hand_values() {
        let out = standardize_bonuses(&[0.2, 0.4, 0.6, 0.8]);
        let expect = [0.0, 0.0, 0.4472, 1.3416];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-4, "{o} vs {e}");
        }
        assert_eq!(standardize_bonuses(&[0.3; 5]), vec![0.0; 5]);
    }

    #[test]
    fn standardize_is_translation_invariant_and_nonnegative() {
        let mut rng = crate::rng::derive_rng(23, "std-fuzz", &[]);
        for _ in 0..200 {
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
            let shifted: Vec<f64> = b.iter().map(|x| x + 5.5).collect();
            let ea = standardize_bonuses(&b);
            let eb = standardize_bonuses(&shifted);
            for (x, y) in ea.iter().zip(&eb) {
                assert!((x - y).abs() < 1e-9);
                assert!(*x >= 0.0);
            }
        }
    }

    #[test]
    fn integrate_bonus_examples() {
        assert!((integrate_bonus(1.0, 1.0, 0.4, 0.5) - 1.4).abs() < 1e-15);
        assert!((integrate_bonus(-0.5, 2.0, 0.4, 0.5) - (-0.25)).abs() < 1e-15);
        // A zero bonus term leaves both branches at the old advantage: the
        // min picks a_old against (1+alpha)*a_old for a_old >= 0 and against
        // the less-negative (1-alpha)*a_old for a_old < 0.
        assert_eq!(integrate_bonus(1.0, 1.0, 0.0, 0.5), 1.0);
        assert_eq!(integrate_bonus(-0.5, 1.0, 0.0, 0.5), -0.5);
        assert_eq!(apply_integration(-0.5, 1.0, 0.0, 0.5, false), -0.5);
        assert_eq!(apply_integration(-0.5, 1.0, 0.0, 0.5, true), -0.5);
    }

    #[test]
    fn integration_sign_safety() {
        let mut rng = crate::rng::derive_rng(29, "sign-fuzz", &[]);
        for _ in 0..1000 {
            let a_old: f64 = rng.random_range(-2.0..2.0);
            let a_exp: f64 = rng.random_range(0.0..3.0);
            let gamma: f64 = rng.random_range(0.0..1.0);
            let alpha: f64 = rng.random_range(0.05..0.95);
            let a_new = integrate_bonus(a_old, a_exp, gamma, alpha);
            if a_old >= 0.0 {
                assert!(a_new <= (1.0 + alpha) * a_old + 1e-12);
                assert!(a_new >= a_old.min((1.0 + alpha) * a_old) - 1e-12);
            } else {
                assert!(a_new <= (1.0 - alpha) * a_old + 1e-12);
                assert!(a_new < 0.0);
            }
        }
    }

    #[test]
    fn gamma_schedule_anchor_points() {
        let cfg = ShapingConfig::default(); // gamma_max 0.4, 10/200, floor 0.1
        assert!((gamma_schedule(5, &cfg) - 0.2).abs() < 1e-15);
        assert!((gamma_schedule(10, &cfg) - 0.4).abs() < 1e-15);
        assert!((gamma_schedule(200, &cfg) - 0.04).abs() < 1e-15);
        assert!((gamma_schedule(500, &cfg) - 0.04).abs() < 1e-15);
        assert_eq!(gamma_schedule(0, &cfg), 0.0);
        // Midpoint of the cosine: halfway between floor and peak.
        assert!((gamma_schedule(105, &cfg) - (0.04 + 0.36 / 2.0)).abs() < 1e-12);
    }

    fn toy_group(rewards: &[f64], lens: &[usize]) -> RolloutGroup {
        use crate::env::{State, Trajectory};
        let trajectories = lens
            .iter()
            .zip(rewards)
            .map(|(&l, &r)| {
                let states: Vec<State> = (0..=l)
                    .map(|i| State {
                        prompt_id: 0,
                        tokens: vec![1; i],
                        step: i + 1,
                    })
                    .collect();
                Trajectory {
                    states,
                    actions: vec![1; l],
                    terminal_reward: r,
                    len: l,
                }
            })
            .collect();
        RolloutGroup {
            prompt_id: 0,
            trajectories,
            old_logps: lens.iter().map(|&l| vec![-0.7; l]).collect(),
            rewards: rewards.to_vec(),
        }
    }

    #[test]
    fn dapo_drops_degenerate_groups_and_shapes_length() {
        let all_fail = toy_group(&[-1.0, -1.0], &[3, 4]);
        let mixed = toy_group(&[1.0, -1.0], &[10, 2]);
        let limits = DapoLimits {
            soft_length_limit: Some(8),
            penalty_slope: 0.1,
        };
        let (retained, rewards) = dapo_adjust(vec![all_fail, mixed], &limits);
        assert_eq!(retained.len(), 1);
        // Length 10 over the soft cap of 8 at slope 0.1 loses 0.2.
        assert!((rewards[0][0] - 0.8).abs() < 1e-12);
        assert_eq!(rewards[0][1], -1.0);
    }

    #[test]
    fn shape_group_trajectory_level_pipeline() {
        let group = toy_group(&[1.0, -1.0], &[4, 4]);
        let vars = vec![vec![0.9, 0.8, 0.85, 0.1], vec![0.1, 0.05, 0.2, 0.15]];
        let filter = FilterConfig {
            top_percentile: 0.75,
            min_run: 3,
            noise_rules: Vec::new(),
        };
        let cfg = ShapingConfig::default();
        let shaped = shape_group(&group, &group.rewards, &vars, 0.4, &filter, &cfg).unwrap();
        assert_eq!(shaped.retained[0], vec![0, 1, 2]);
        assert_eq!(shaped.a_old, vec![1.0, -1.0]);
        // First trajectory keeps a 3-run: B = sqrt((0.9+0.8+0.85)/4).
        // Second keeps nothing after the coherence stage, so B = 0.
        assert!((shaped.b[0] - (2.55f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(shaped.b[1], 0.0);
        // Standardized pair maps to [1, 0] after truncation.
        assert!((shaped.a_exploration[0] - 1.0).abs() < 1e-12);
        assert_eq!(shaped.a_exploration[1], 0.0);
        // Winner: min(1 + 0.4, 1.5) = 1.4; loser: min(-1, -0.5) = -1.
        assert!((shaped.a_new[0] - 1.4).abs() < 1e-12);
        assert!((shaped.a_new[1] + 1.0).abs() < 1e-12);
        assert_eq!(shaped.token_advantages[0], vec![shaped.a_new[0]; 4]);
    }

    #[test]
    fn shape_group_token_integration_ablation() {
        let group = toy_group(&[1.0, -1.0], &[4, 4]);
        let vars = vec![vec![0.9, 0.8, 0.85, 0.1], vec![0.1, 0.05, 0.2, 0.15]];
        let filter = FilterConfig {
            top_percentile: 1.0,
            min_run: 1,
            noise_rules: Vec::new(),
        };
        let cfg = ShapingConfig {
            token_integration: true,
            ..ShapingConfig::default()
        };
        let shaped = shape_group(&group, &group.rewards, &vars, 0.4, &filter, &cfg).unwrap();
        // Trajectory-level advantages pass through unchanged.
        assert_eq!(shaped.a_new, shaped.a_old);
        // Token advantages differ within a trajectory: high-variance tokens
        // get boosted up to the cap, low ones keep the base advantage.
        let winners = &shaped.token_advantages[0];
        assert!(winners.iter().any(|&a| a > 1.0));
        assert!(winners.iter().all(|&a| a <= 1.5 + 1e-12));
        let losers = &shaped.token_advantages[1];
        assert!(losers.iter().all(|&a| a <= -0.5 + 1e-12));
    }
}
