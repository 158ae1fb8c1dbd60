//! Softmax token policy over environment states: feature encoding, group
//! rollout sampling, the clipped surrogate update, and the entropy-regularized
//! policy decomposition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvSpec, State, Trajectory};
use crate::error::{Error, Result};
use crate::net::{opt_step, NetGrads, NetParams, OptimState};
use crate::rng::derive_rng;

pub const DEFAULT_CONTEXT_WINDOW: usize = 4;

/// Fixed-length encoding of a state: one-hot slots for the last `k` tokens
/// (a null slot pads short prefixes) plus a progress entry equal to the
/// fraction of the horizon already generated. Length `k * (vocab + 1) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub vector: Vec<f64>,
}

/// Deterministic state encoder; distinct last-`k` windows give distinct
/// features.
#[derive(Debug, Clone, Copy)]
pub struct FeatureEncoder {
    pub vocab_size: u32,
    pub horizon: usize,
    pub window: usize,
}

impl FeatureEncoder {
    pub fn new(spec: &EnvSpec, window: usize) -> Self {
        FeatureEncoder {
            vocab_size: spec.vocab_size,
            horizon: spec.horizon,
            window,
        }
    }

    pub fn dim(&self) -> usize {
        self.window * (self.vocab_size as usize + 1) + 1
    }

    pub fn encode(&self, state: &State) -> StateFeatures {
        let slot = self.vocab_size as usize + 1;
        let null_idx = self.vocab_size as usize;
        let mut v = vec![0.0; self.dim()];
        let n = state.tokens.len();
        for j in 0..self.window {
            // Oldest-first within the window; positions before the prefix
            // start land in the null slot.
            let pos = n as i64 - self.window as i64 + j as i64;
            let idx = if pos < 0 {
                null_idx
            } else {
                state.tokens[pos as usize] as usize
            };
            v[j * slot + idx] = 1.0;
        }
        v[self.window * slot] = n as f64 / self.horizon as f64;
        StateFeatures { vector: v }
    }
}

/// Free-function form of the encoder.
pub fn featurize(state: &State, spec: &EnvSpec, window: usize) -> StateFeatures {
    FeatureEncoder::new(spec, window).encode(state)
}

fn softmax_from_logits(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite policy logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Token distribution at a state: softmax of the net output. Sums to one and
/// every entry is strictly positive.
pub fn action_distribution(params: &NetParams, features: &StateFeatures) -> Result<Vec<f64>> {
    let (logits, _) = params.forward(&features.vector)?;
    softmax_from_logits(&logits)
}

/// `G` rollouts for one prompt with per-token log-probs recorded under the
/// sampling policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: u32,
    pub trajectories: Vec<Trajectory>,
    pub old_logps: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn size(&self) -> usize {
        self.trajectories.len()
    }
}

/// Samples a group of `group_size` independent rollouts to termination.
/// Deterministic in `seed`; each member draws from its own derived stream, so
/// members could be produced in parallel without changing the result.
pub fn sample_group(
    params: &NetParams,
    spec: &EnvSpec,
    window: usize,
    prompt_id: u32,
    group_size: usize,
    seed: u64,
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(Error::config("group size must be at least 2"));
    }
    let encoder = FeatureEncoder::new(spec, window);
    let mut trajectories = Vec::with_capacity(group_size);
    let mut old_logps = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    for member in 0..group_size {
        let mut rng = derive_rng(seed, "group-member", &[member as u64]);
        let mut state = env::reset(spec, prompt_id)?;
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        let mut logps = Vec::new();
        loop {
            if env::is_terminal(spec, &state) {
                break;
            }
            let probs = action_distribution(params, &encoder.encode(&state))?;
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut action = spec.vocab_size - 1;
            for (a, &p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    action = a as u32;
                    break;
                }
            }
            logps.push(probs[action as usize].ln());
            let (next, terminal) = env::step(spec, &state, action)?;
            actions.push(action);
            states.push(next.clone());
            state = next;
            if terminal {
                break;
            }
        }
        let len = actions.len();
        let mut traj = Trajectory {
            states,
            actions,
            terminal_reward: 0.0,
            len,
        };
        traj.terminal_reward = env::outcome_reward(spec, &traj)?;
        rewards.push(traj.terminal_reward);
        trajectories.push(traj);
        old_logps.push(logps);
    }
    Ok(RolloutGroup {
        prompt_id,
        trajectories,
        old_logps,
        rewards,
    })
}

/// Clipping and regularization settings for the surrogate objective.
/// `ref_params` is the frozen pre-update checkpoint the KL term pulls toward.
#[derive(Debug, Clone)]
pub struct SurrogateConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta_kl: f64,
    /// Sequence-mean aggregation when false; pooled token mean when true.
    pub token_level_loss: bool,
    pub ref_params: NetParams,
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) || !(self.eps_high > 0.0 && self.eps_high < 1.0)
        {
            return Err(Error::config("clip range must lie in (0, 1)"));
        }
        if self.beta_kl < 0.0 {
            return Err(Error::config("beta_kl must be non-negative"));
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateDiagnostics {
    pub objective: f64,
    /// Fraction of tokens where the clipped term was the active minimum.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// Mean exact KL(policy || reference), summed over the vocabulary.
    pub exact_kl: f64,
    pub tokens: usize,
}

/// Per-trajectory, per-token advantages aligned with a [`RolloutGroup`].
pub type GroupTokenAdvantages = Vec<Vec<f64>>;

struct TokenTerm {
    objective: f64,
    dlogits: Vec<f64>,
    ratio: f64,
    clipped: bool,
    kl: f64,
}

/// Objective and logit gradient for one token. The KL term is computed
/// exactly by summing over the vocabulary.
fn token_term(
    params: &NetParams,
    cfg: &SurrogateConfig,
    features: &StateFeatures,
    action: u32,
    old_logp: f64,
    advantage: f64,
    want_grad: bool,
) -> Result<(TokenTerm, Option<crate::net::ForwardCache>)> {
    let (logits, cache) = params.forward(&features.vector)?;
    let probs = softmax_from_logits(&logits)?;
    let a = action as usize;
    let logp = probs[a].ln();
    let ratio = (logp - old_logp).exp();
    let unclipped = ratio * advantage;
    let clipped_ratio = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let clipped = clipped_ratio * advantage;
    let clip_active = clipped < unclipped;
    let objective_ratio = unclipped.min(clipped);

    let mut kl = 0.0;
    let mut ref_probs = Vec::new();
    if cfg.beta_kl > 0.0 {
        let (ref_logits, _) = cfg.ref_params.forward(&features.vector)?;
        ref_probs = softmax_from_logits(&ref_logits)?;
        for (p, q) in probs.iter().zip(&ref_probs) {
            kl += p * (p.ln() - q.ln());
        }
    }
    let objective = objective_ratio - cfg.beta_kl * kl;

    let dlogits = if want_grad {
        let mut d = vec![0.0; probs.len()];
        if !clip_active && advantage != 0.0 {
            // d(ratio * A)/dz_j = A * ratio * (1[j == a] - p_j)
            for (j, pj) in probs.iter().enumerate() {
                d[j] += advantage * ratio * (if j == a { 1.0 } else { 0.0 } - pj);
            }
        }
        if cfg.beta_kl > 0.0 {
            // dKL/dz_j = p_j * ((ln p_j - ln q_j) - KL)
            for (j, (pj, qj)) in probs.iter().zip(&ref_probs).enumerate() {
                d[j] -= cfg.beta_kl * pj * ((pj.ln() - qj.ln()) - kl);
            }
        }
        d
    } else {
        Vec::new()
    };

    Ok((
        TokenTerm {
            objective,
            dlogits,
            ratio,
            clipped: clip_active,
            kl,
        },
        if want_grad { Some(cache) } else { None },
    ))
}

fn check_alignment(groups: &[RolloutGroup], advantages: &[GroupTokenAdvantages]) -> Result<()> {
    if groups.len() != advantages.len() {
        return Err(Error::usage("advantages not aligned with groups"));
    }
    for (g, adv) in groups.iter().zip(advantages) {
        if g.trajectories.len() != adv.len() || g.old_logps.len() != g.trajectories.len() {
            return Err(Error::usage("advantages not aligned with trajectories"));
        }
        for ((t, a), logps) in g.trajectories.iter().zip(adv).zip(&g.old_logps) {
            if t.len != a.len() || logps.len() != t.len {
                return Err(Error::usage("advantages not aligned token-wise"));
            }
        }
    }
    Ok(())
}

/// Token weight under the configured aggregation: each trajectory
/// contributes `1/l` within its group (sequence mean), or every token in the
/// group weighs the same (token-level mean). Groups always weigh equally.
fn token_weight(cfg: &SurrogateConfig, group: &RolloutGroup, traj_len: usize) -> f64 {
    if cfg.token_level_loss {
        let total: usize = group.trajectories.iter().map(|t| t.len).sum();
        if total == 0 {
            0.0
        } else {
            1.0 / total as f64
        }
    } else {
        1.0 / (group.size() as f64 * traj_len as f64)
    }
}

/// Value of the clipped surrogate objective (ascent direction positive).
/// Evaluation only; used by gradient checks and diagnostics.
#[allow(clippy::needless_range_loop)]
pub fn surrogate_objective(
    params: &NetParams,
    groups: &[RolloutGroup],
    advantages: &[GroupTokenAdvantages],
    cfg: &SurrogateConfig,
    encoder: &FeatureEncoder,
) -> Result<f64> {
    cfg.validate()?;
    check_alignment(groups, advantages)?;
    let mut total = 0.0;
    for (group, adv) in groups.iter().zip(advantages) {
        for (ti, traj) in group.trajectories.iter().enumerate() {
            let w = token_weight(cfg, group, traj.len);
            for t in 0..traj.len {
                let features = encoder.encode(traj.state_before(t));
                let (term, _) = token_term(
                    params,
                    cfg,
                    &features,
                    traj.actions[t],
                    group.old_logps[ti][t],
                    adv[ti][t],
                    false,
                )?;
                total += w * term.objective;
            }
        }
    }
    Ok(total / groups.len().max(1) as f64)
}

/// One ascent step on the clipped surrogate. Returns updated parameters and
/// optimizer state plus diagnostics; on a non-finite objective or gradient
/// the parameters are left untouched and a numerical fault is returned.
#[allow(clippy::needless_range_loop)]
pub fn surrogate_update(
    params: &NetParams,
    groups: &[RolloutGroup],
    advantages: &[GroupTokenAdvantages],
    cfg: &SurrogateConfig,
    opt: &OptimState,
    encoder: &FeatureEncoder,
) -> Result<(NetParams, OptimState, SurrogateDiagnostics)> {
    cfg.validate()?;
    check_alignment(groups, advantages)?;
    let mut loss_grads = NetGrads::zeros_like(params);
    let mut objective = 0.0;
    let mut clipped_tokens = 0usize;
    let mut ratio_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut tokens = 0usize;
    let group_norm = 1.0 / groups.len().max(1) as f64;
    for (group, adv) in groups.iter().zip(advantages) {
        for (ti, traj) in group.trajectories.iter().enumerate() {
            let w = token_weight(cfg, group, traj.len) * group_norm;
            for t in 0..traj.len {
                let features = encoder.encode(traj.state_before(t));
                let (term, cache) = token_term(
                    params,
                    cfg,
                    &features,
                    traj.actions[t],
                    group.old_logps[ti][t],
                    adv[ti][t],
                    true,
                )?;
                objective += w * term.objective;
                ratio_sum += term.ratio;
                kl_sum += term.kl;
                clipped_tokens += term.clipped as usize;
                tokens += 1;
                // Minimizers take the negative of the ascent gradient.
                let token_grads =
                    params.backward(cache.as_ref().expect("grad requested"), &term.dlogits)?;
                loss_grads.add_scaled(&token_grads, -w);
            }
        }
    }
    if !objective.is_finite() || !loss_grads.is_finite() {
        return Err(Error::numerical("non-finite surrogate loss"));
    }
    let (new_params, new_opt) = opt_step(params, &loss_grads, opt)?;
    let diag = SurrogateDiagnostics {
        objective,
        clip_fraction: if tokens == 0 {
            0.0
        } else {
            clipped_tokens as f64 / tokens as f64
        },
        mean_ratio: if tokens == 0 {
            0.0
        } else {
            ratio_sum / tokens as f64
        },
        exact_kl: if tokens == 0 { 0.0 } else { kl_sum / tokens as f64 },
        tokens,
    };
    Ok((new_params, new_opt, diag))
}

/// Softmax policy split into greedy mass and an exploration remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct BoltzmannDecomposition {
    pub best_action: usize,
    /// Probability the softmax policy plays the best action.
    pub p_star: f64,
    /// Exploration probability `1 - p_star`.
    pub eps_beta: f64,
    /// Distribution over suboptimal actions (zero at `best_action`).
    pub q: Vec<f64>,
}

impl BoltzmannDecomposition {
    /// Recombines `(1 - eps) * delta + eps * q`, which equals the softmax of
    /// `advantages / beta` coordinate by coordinate.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.q.iter().map(|&q| self.eps_beta * q).collect();
        p[self.best_action] += self.p_star;
        p
    }
}

/// Splits the softmax of `advantages / beta` into greedy and exploration
/// parts. Ties for the best action break toward the lowest index.
pub fn boltzmann_decompose(advantages: &[f64], beta: f64) -> Result<BoltzmannDecomposition> {
    if advantages.is_empty() {
        return Err(Error::usage("no actions to decompose"));
    }
    if !beta.is_finite() || beta <= 0.0 || advantages.iter().any(|a| !a.is_finite()) {
        return Err(Error::usage("beta must be positive and advantages finite"));
    }
    let mut best = 0usize;
    for (i, &a) in advantages.iter().enumerate() {
        if a > advantages[best] {
            best = i;
        }
    }
    // Gaps from the best action; weights exp(-gap/beta) over the rest.
    let mut weights = vec![0.0; advantages.len()];
    let mut sum = 0.0;
    for (i, &a) in advantages.iter().enumerate() {
        if i != best {
            let gap = advantages[best] - a;
            weights[i] = (-gap / beta).exp();
            sum += weights[i];
        }
    }
    let p_star = 1.0 / (1.0 + sum);
    let q = if sum > 0.0 {
        weights.iter().map(|&w| w / sum).collect()
    } else {
        weights
    };
    Ok(BoltzmannDecomposition {
        best_action: best,
        p_star,
        eps_beta: 1.0 - p_star,
        q,
    })
}
