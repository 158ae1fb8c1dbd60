//! Uncertainty propagation for known deterministic transitions.
//!
//! With the transition function known, posterior variance over Q-values obeys
//! a backward recursion: local reward variance plus the policy-weighted
//! variance of the unique successor. [`ube_propagate`] builds that table
//! exactly; [`posterior_variance_oracle`] estimates the left-hand side by
//! sampling reward functions from the posterior and solving the Bellman
//! equation per sample, which is how the bound is verified.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvSpec, State, StateKey};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// A fully enumerated deterministic-transition MDP: states in breadth-first
/// order, available actions per state (empty for terminals), and successor
/// indices per (state, action).
#[derive(Debug, Clone)]
pub struct EnumeratedMdp {
    pub states: Vec<State>,
    pub actions: Vec<Vec<u32>>,
    pub successor: Vec<Vec<usize>>,
    pub horizon: usize,
}

impl EnumeratedMdp {
    pub fn build(spec: &EnvSpec, cap: usize) -> Result<Self> {
        let enumerated = env::enumerate_reachable(spec, cap)?;
        let index: HashMap<StateKey, usize> = enumerated
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.key(), i))
            .collect();
        let mut states = Vec::with_capacity(enumerated.len());
        let mut actions = Vec::with_capacity(enumerated.len());
        let mut successor = Vec::with_capacity(enumerated.len());
        for (state, acts) in &enumerated {
            let mut succ = Vec::with_capacity(acts.len());
            for &a in acts {
                let (next, _) = env::step(spec, state, a)?;
                succ.push(index[&next.key()]);
            }
            states.push(state.clone());
            actions.push(acts.clone());
            successor.push(succ);
        }
        Ok(EnumeratedMdp {
            states,
            actions,
            successor,
            horizon: spec.horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_terminal(&self, idx: usize) -> bool {
        self.actions[idx].is_empty()
    }
}

/// Action probabilities per state, aligned with `mdp.actions`.
pub type PolicyProbs = Vec<Vec<f64>>;

/// Uniform over the available actions everywhere.
pub fn uniform_policy(mdp: &EnumeratedMdp) -> PolicyProbs {
    mdp.actions
        .iter()
        .map(|acts| {
            if acts.is_empty() {
                Vec::new()
            } else {
                vec![1.0 / acts.len() as f64; acts.len()]
            }
        })
        .collect()
}

/// Point mass on `choose(state)` at every non-terminal state.
pub fn deterministic_policy(
    mdp: &EnumeratedMdp,
    mut choose: impl FnMut(&State) -> u32,
) -> PolicyProbs {
    mdp.states
        .iter()
        .zip(&mdp.actions)
        .map(|(state, acts)| {
            if acts.is_empty() {
                return Vec::new();
            }
            let pick = choose(state);
            acts.iter().map(|&a| if a == pick { 1.0 } else { 0.0 }).collect()
        })
        .collect()
}

fn validate_policy(mdp: &EnumeratedMdp, policy: &PolicyProbs) -> Result<()> {
    if policy.len() != mdp.len() {
        return Err(Error::usage("policy not aligned with enumerated states"));
    }
    for (i, probs) in policy.iter().enumerate() {
        if probs.len() != mdp.actions[i].len() {
            return Err(Error::usage("policy probs not aligned with actions"));
        }
        if probs.is_empty() {
            continue;
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|&p| p < 0.0) {
            return Err(Error::usage(format!(
                "policy at state {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Per-state posterior over mean rewards: a mean and a variance, plus a
/// Gaussian sampler used by the oracle. Terminal states carry no reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl RewardPosterior {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::usage("posterior mean/variance length mismatch"));
        }
        if variance.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::usage("posterior variances must be finite and >= 0"));
        }
        Ok(RewardPosterior { mean, variance })
    }

    pub fn constant(mdp: &EnumeratedMdp, variance: f64) -> Result<Self> {
        Self::new(vec![0.0; mdp.len()], vec![variance; mdp.len()])
    }

    /// Draws one reward function from the posterior.
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(&m, &v)| m + v.sqrt() * normal.sample(rng))
            .collect()
    }
}

/// Posterior Q-value variance per (state, action), `U^{H+1} = 0` implicit in
/// the empty rows of terminal states.
#[derive(Debug, Clone)]
pub struct UncertaintyTable {
    pub u: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl UncertaintyTable {
    pub fn get(&self, state_idx: usize, action_idx: usize) -> f64 {
        self.u[state_idx][action_idx]
    }
}

/// Backward recursion for the posterior Q-variance bound: at each
/// non-terminal state `s` and action `a` with unique successor `s'`,
///
/// `U(s, a) = Var[r(s)] + sum_{a'} pi(a' | s') U(s', a')`.
///
/// The table is the right-hand side computed with equality; the oracle below
/// supplies the left-hand side for verification.
pub fn ube_propagate(
    mdp: &EnumeratedMdp,
    policy: &PolicyProbs,
    reward_var: &RewardPosterior,
) -> Result<UncertaintyTable> {
    validate_policy(mdp, policy)?;
    if reward_var.variance.len() != mdp.len() {
        return Err(Error::usage("posterior not aligned with enumerated states"));
    }
    let mut u: Vec<Vec<f64>> = mdp.actions.iter().map(|a| vec![0.0; a.len()]).collect();
    // States are breadth-first, so iterating in reverse visits successors
    // before their parents.
    for i in (0..mdp.len()).rev() {
        for (ai, _) in mdp.actions[i].iter().enumerate() {
            let next = mdp.successor[i][ai];
            let mut downstream = 0.0;
            for (naj, &prob) in policy[next].iter().enumerate() {
                downstream += prob * u[next][naj];
            }
            u[i][ai] = reward_var.variance[i] + downstream;
        }
    }
    Ok(UncertaintyTable {
        u,
        horizon: mdp.horizon,
    })
}

/// Monte-Carlo estimate of the posterior Q-variance with standard errors.
#[derive(Debug, Clone)]
pub struct OracleVariance {
    pub var: Vec<Vec<f64>>,
    /// Standard error of each variance estimate. Sampled Q-values are linear
    /// in the Gaussian rewards, hence Gaussian, so `se = var * sqrt(2/(n-1))`.
    pub se: Vec<Vec<f64>>,
    pub n_samples: usize,
}

/// Draws `n_samples` reward functions, solves the posterior Bellman equation
/// for each, and returns the per-(state, action) empirical variance of the
/// sampled Q-values.
pub fn posterior_variance_oracle(
    mdp: &EnumeratedMdp,
    policy: &PolicyProbs,
    posterior: &RewardPosterior,
    n_samples: usize,
    seed: u64,
) -> Result<OracleVariance> {
    validate_policy(mdp, policy)?;
    if n_samples < 2 {
        return Err(Error::config("oracle needs at least 2 samples"));
    }
    let mut rng = derive_rng(seed, "posterior-oracle", &[]);
    let mut mean: Vec<Vec<f64>> = mdp.actions.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut m2: Vec<Vec<f64>> = mdp.actions.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut q: Vec<Vec<f64>> = mdp.actions.iter().map(|a| vec![0.0; a.len()]).collect();
    for sample_idx in 0..n_samples {
        let rewards = posterior.sample(&mut rng);
        // Posterior Bellman for this sample, backward over the layers.
        for i in (0..mdp.len()).rev() {
            for (ai, _) in mdp.actions[i].iter().enumerate() {
                let next = mdp.successor[i][ai];
                let mut downstream = 0.0;
                for (naj, &prob) in policy[next].iter().enumerate() {
                    downstream += prob * q[next][naj];
                }
                q[i][ai] = rewards[i] + downstream;
            }
        }
        // Welford accumulation per entry.
        let count = (sample_idx + 1) as f64;
        for i in 0..mdp.len() {
            for ai in 0..mdp.actions[i].len() {
                let x = q[i][ai];
                let delta = x - mean[i][ai];
                mean[i][ai] += delta / count;
                m2[i][ai] += delta * (x - mean[i][ai]);
            }
        }
    }
    let denom = (n_samples - 1) as f64;
    let se_factor = (2.0 / denom).sqrt();
    let var: Vec<Vec<f64>> = m2
        .iter()
        .map(|row| row.iter().map(|&v| v / denom).collect())
        .collect();
    let se = var
        .iter()
        .map(|row: &Vec<f64>| row.iter().map(|&v| v * se_factor).collect())
        .collect();
    Ok(OracleVariance {
        var,
        se,
        n_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusMode {
    /// Sum the per-token variances first, take the square root last. Grows
    /// as sqrt(H) on constant variance.
    CumulativeVariance,
    /// Sum per-token standard deviations. Overestimates long-horizon
    /// uncertainty (grows as H); kept for the ablation.
    CumulativeStd,
}

/// Trajectory-level bonus from per-token variances of the retained tokens.
/// `normalize_by_length` divides by the full trajectory length `l` inside the
/// aggregation (the compressed form used during training).
pub fn trajectory_bonus(
    variances: &[f64],
    l: usize,
    mode: BonusMode,
    normalize_by_length: bool,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::usage("trajectory length must be >= 1"));
    }
    if variances.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::usage("variances must be finite and >= 0"));
    }
    if variances.is_empty() {
        return Ok(0.0);
    }
    let norm = if normalize_by_length { l as f64 } else { 1.0 };
    Ok(match mode {
        BonusMode::CumulativeVariance => (variances.iter().sum::<f64>() / norm).sqrt(),
        BonusMode::CumulativeStd => variances.iter().map(|v| (v / norm).sqrt()).sum(),
    })
}

/// Optimism-adjusted value `Q + alpha * sqrt(U)`.
pub fn ucb_value(q: f64, u: f64, alpha: f64) -> Result<f64> {
    if u < 0.0 {
        return Err(Error::usage("uncertainty must be non-negative"));
    }
    Ok(q + alpha * u.sqrt())
}
