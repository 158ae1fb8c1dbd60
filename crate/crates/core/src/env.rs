//! Deterministic, finite-horizon token-generation environments with sparse
//! outcome rewards.
//!
//! A state is the token prefix generated so far; an action appends one token;
//! the transition is a known delta function. Rewards are terminal-only:
//! exactly one action sequence (or pattern) earns `reward_correct`, everything
//! else earns `reward_incorrect`. Environments are immutable value objects and
//! safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Combination lock: one exact sequence pays out. By default the episode
    /// ends on the first wrong token, which makes random-play success
    /// probability `vocab^-H` — the canonical hard-exploration stressor.
    ChainLock,
    /// Full-depth tree with a single rewarded leaf; never terminates early.
    RewardTree,
    /// Free generation to the horizon; rewarded iff the target appears as a
    /// contiguous subsequence of the emitted tokens.
    PatternLm,
}

/// Environment description. Construct with [`EnvSpec::new`] or deserialize
/// from config JSON; both paths run [`EnvSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub vocab_size: u32,
    pub horizon: usize,
    /// The rewarded path (chain_lock / reward_tree) or pattern (pattern_lm).
    pub target: Vec<u32>,
    #[serde(default = "default_reward_correct")]
    pub reward_correct: f64,
    #[serde(default = "default_reward_incorrect")]
    pub reward_incorrect: f64,
    /// Disables early termination for chain_lock; other kinds ignore it.
    #[serde(default)]
    pub full_horizon: bool,
    /// Number of valid prompt ids. Prompts share the target; the id is the
    /// grouping key for rollout groups.
    #[serde(default = "default_num_prompts")]
    pub num_prompts: u32,
}

fn default_reward_correct() -> f64 {
    1.0
}

fn default_reward_incorrect() -> f64 {
    -1.0
}

fn default_num_prompts() -> u32 {
    1
}

impl EnvSpec {
    pub fn new(kind: EnvKind, vocab_size: u32, horizon: usize, target: Vec<u32>) -> Result<Self> {
        let spec = EnvSpec {
            kind,
            vocab_size,
            horizon,
            target,
            reward_correct: default_reward_correct(),
            reward_incorrect: default_reward_incorrect(),
            full_horizon: false,
            num_prompts: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Switches to the 1.0 / 0.0 reward convention.
    pub fn with_unit_rewards(mut self) -> Self {
        self.reward_correct = 1.0;
        self.reward_incorrect = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if self.target.is_empty() || self.target.len() > self.horizon {
            return Err(Error::config(format!(
                "target length {} must be in 1..={}",
                self.target.len(),
                self.horizon
            )));
        }
        if let Some(&t) = self.target.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::config(format!(
                "target token {t} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        if self.reward_correct <= self.reward_incorrect {
            return Err(Error::config(
                "reward_correct must exceed reward_incorrect",
            ));
        }
        // Path-matching kinds need a full-length target, otherwise no
        // trajectory can ever match it and the reward partition breaks.
        if matches!(self.kind, EnvKind::ChainLock | EnvKind::RewardTree)
            && self.target.len() != self.horizon
        {
            return Err(Error::config(format!(
                "{:?} requires |target| == horizon ({} != {})",
                self.kind,
                self.target.len(),
                self.horizon
            )));
        }
        if self.num_prompts == 0 {
            return Err(Error::config("num_prompts must be positive"));
        }
        Ok(())
    }
}

/// Token prefix plus bookkeeping. `step` is `tokens.len() + 1` and runs from 1
/// (empty prefix) to `horizon + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub prompt_id: u32,
    pub tokens: Vec<u32>,
    pub step: usize,
}

impl State {
    /// Canonical identity used by exact counters and visited-state metrics.
    pub fn key(&self) -> StateKey {
        StateKey {
            prompt_id: self.prompt_id,
            tokens: self.tokens.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub prompt_id: u32,
    pub tokens: Vec<u32>,
}

/// A finished rollout: the visited states (length `len + 1`, root included),
/// the action at each step, and the terminal reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<u32>,
    pub terminal_reward: f64,
    pub len: usize,
}

impl Trajectory {
    /// State the policy saw before emitting `actions[t]`.
    pub fn state_before(&self, t: usize) -> &State {
        &self.states[t]
    }

    /// State including token `t` — the prefix the bonus model scores.
    pub fn state_after(&self, t: usize) -> &State {
        &self.states[t + 1]
    }
}

/// Initial state for a prompt: empty prefix at step 1.
pub fn reset(spec: &EnvSpec, prompt_id: u32) -> Result<State> {
    if prompt_id >= spec.num_prompts {
        return Err(Error::config(format!(
            "unknown prompt id {prompt_id} (spec has {})",
            spec.num_prompts
        )));
    }
    Ok(State {
        prompt_id,
        tokens: Vec::new(),
        step: 1,
    })
}

/// Appends `action` to the prefix. Returns the successor and whether it is
/// terminal. Transitions are exact: same inputs, same outputs, always.
pub fn step(spec: &EnvSpec, state: &State, action: u32) -> Result<(State, bool)> {
    if state.step > spec.horizon {
        return Err(Error::usage("cannot step a terminal state"));
    }
    if is_terminal(spec, state) {
        return Err(Error::usage("cannot step a terminal state"));
    }
    if action >= spec.vocab_size {
        return Err(Error::usage(format!(
            "action {action} outside vocabulary of size {}",
            spec.vocab_size
        )));
    }
    let mut tokens = state.tokens.clone();
    tokens.push(action);
    let next = State {
        prompt_id: state.prompt_id,
        tokens,
        step: state.step + 1,
    };
    let terminal = is_terminal(spec, &next);
    Ok((next, terminal))
}

/// Terminal when the horizon is exhausted, or (early-stop chain_lock) when the
/// prefix has deviated from the target.
pub fn is_terminal(spec: &EnvSpec, state: &State) -> bool {
    if state.tokens.len() >= spec.horizon {
        return true;
    }
    if matches!(spec.kind, EnvKind::ChainLock) && !spec.full_horizon {
        return !is_target_prefix(spec, &state.tokens);
    }
    false
}

fn is_target_prefix(spec: &EnvSpec, tokens: &[u32]) -> bool {
    tokens.len() <= spec.target.len() && tokens == &spec.target[..tokens.len()]
}

fn contains_contiguous(haystack: &[u32], needle: &[u32]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Terminal reward for a finished trajectory.
pub fn outcome_reward(spec: &EnvSpec, traj: &Trajectory) -> Result<f64> {
    let last = traj
        .states
        .last()
        .ok_or_else(|| Error::usage("empty trajectory"))?;
    if !is_terminal(spec, last) {
        return Err(Error::usage("outcome_reward on a non-terminal trajectory"));
    }
    let correct = match spec.kind {
        EnvKind::ChainLock | EnvKind::RewardTree => traj.actions == spec.target,
        EnvKind::PatternLm => contains_contiguous(&traj.actions, &spec.target),
    };
    Ok(if correct {
        spec.reward_correct
    } else {
        spec.reward_incorrect
    })
}

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Every reachable state exactly once, in breadth-first order (topological by
/// step), each paired with its available actions (empty for terminals).
///
/// Refuses with a size estimate when the full tree `vocab^horizon` would
/// exceed `cap`.
pub fn enumerate_reachable(spec: &EnvSpec, cap: usize) -> Result<Vec<(State, Vec<u32>)>> {
    let mut estimate: f64 = 0.0;
    let mut layer = 1.0f64;
    for _ in 0..=spec.horizon {
        estimate += layer;
        layer *= spec.vocab_size as f64;
    }
    if estimate > cap as f64 {
        return Err(Error::config(format!(
            "enumeration would need about {estimate:.0} states, cap is {cap}"
        )));
    }
    let all_actions: Vec<u32> = (0..spec.vocab_size).collect();
    let mut out = Vec::new();
    let mut frontier = vec![reset(spec, 0)?];
    while let Some(state) = frontier.pop() {
        let terminal = is_terminal(spec, &state);
        let actions = if terminal {
            Vec::new()
        } else {
            all_actions.clone()
        };
        if !terminal {
            // Push in reverse so children pop in token order.
            for &a in all_actions.iter().rev() {
                let (next, _) = step(spec, &state, a)?;
                frontier.push(next);
            }
        }
        out.push((state, actions));
    }
    // Depth-first emission above; re-sort to the breadth-first contract.
    out.sort_by(|a, b| a.0.step.cmp(&b.0.step).then(a.0.tokens.cmp(&b.0.tokens)));
    Ok(out)
}
