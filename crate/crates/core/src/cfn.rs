//! Coin-flipping pseudo-count estimator.
//!
//! A small regressor is trained to predict a fresh random sign vector for
//! every state visit. Because the optimal constant prediction for a state
//! seen `n` times is the mean of its `n` labels, the squared output norm
//! recovers the inverse visit count: `E[(1/d) ||f(s)||^2] = 1/n`. An exact
//! hash-map counter ships alongside as the ground-truth oracle.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{opt_step, Layer, NetGrads, NetParams, OptimState};
use crate::policy::StateFeatures;

/// Output dimension, readable as the number of coins flipped per visit.
pub const DEFAULT_OUTPUT_DIM: usize = 20;

/// Clamp range for the estimated inverse count. The true quantity lives in
/// (0, 1]; an untrained net can overshoot, and downstream square roots need
/// the floor.
pub const INVERSE_COUNT_FLOOR: f64 = 1e-6;
pub const INVERSE_COUNT_CEIL: f64 = 1.0;

/// Trunk-plus-head regressor with its optimizer state. The trunk is a copy
/// of the policy's hidden layers at initialization; the head maps the last
/// hidden layer to `d` outputs. Both train together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfnModel {
    pub net: NetParams,
    pub d: usize,
    pub opt: OptimState,
}

impl CfnModel {
    /// Builds from an arbitrary shape ending in `d` outputs, with a fresh
    /// AdamW optimizer.
    pub fn new(shape: &[usize], d: usize, seed: u64, lr: f64) -> Result<Self> {
        if shape.last() != Some(&d) {
            return Err(Error::config("cfn shape must end in the output dim d"));
        }
        let net = NetParams::init(shape, crate::net::Activation::Tanh, seed)?;
        let opt = OptimState::adamw(&net, lr, 0.0)?;
        Ok(CfnModel { net, d, opt })
    }

    /// Copies the policy's hidden layers as the trunk and attaches a freshly
    /// initialized linear head onto the final hidden layer.
    pub fn from_policy_trunk(policy_init: &NetParams, d: usize, head_seed: u64, lr: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("cfn output dim must be positive"));
        }
        let trunk: Vec<Layer> = policy_init.layers[..policy_init.layers.len() - 1].to_vec();
        let hidden_dim = trunk
            .last()
            .map(|l| l.w.rows)
            .unwrap_or_else(|| policy_init.input_dim());
        let head_net = NetParams::init(&[hidden_dim, d], policy_init.activation, head_seed)?;
        let mut layers = trunk;
        layers.push(head_net.layers[0].clone());
        let net = NetParams {
            layers,
            activation: policy_init.activation,
            seed: head_seed,
            version: 0,
        };
        let opt = OptimState::adamw(&net, lr, 0.0)?;
        Ok(CfnModel { net, d, opt })
    }

    /// Hidden layers shared in structure with the policy at initialization.
    pub fn trunk(&self) -> &[Layer] {
        &self.net.layers[..self.net.layers.len() - 1]
    }

    /// Final linear map onto the `d` coin outputs.
    pub fn head(&self) -> &Layer {
        self.net.layers.last().expect("non-empty net")
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.opt.learning_rate = lr;
        self
    }
}

/// A fresh fair sign vector in `{-1, +1}^d`. Every call consumes the stream,
/// so repeated visits to the same state get different labels.
pub fn rademacher_label(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Squared-error regression loss, summed over the `d` coordinates.
pub fn cfn_loss(output: &[f64], label: &[f64]) -> f64 {
    debug_assert_eq!(output.len(), label.len());
    output
        .iter()
        .zip(label)
        .map(|(f, c)| (c - f) * (c - f))
        .sum()
}

/// One (features, fresh label) pair per state visit.
#[derive(Debug, Clone)]
pub struct CfnBatch {
    pairs: Vec<(StateFeatures, Vec<f64>)>,
}

impl CfnBatch {
    pub fn new(pairs: Vec<(StateFeatures, Vec<f64>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::usage("cfn batch must be non-empty"));
        }
        for (_, label) in &pairs {
            if label.iter().any(|&c| c != 1.0 && c != -1.0) {
                return Err(Error::usage("cfn labels must be exactly +-1"));
            }
        }
        Ok(CfnBatch { pairs })
    }

    pub fn pairs(&self) -> &[(StateFeatures, Vec<f64>)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One optimizer step on the mean loss over the batch. Trunk and head update
/// together. Returns the stepped model and the pre-step mean loss.
pub fn train_step(model: &CfnModel, batch: &CfnBatch) -> Result<(CfnModel, f64)> {
    let scale = 1.0 / batch.len() as f64;
    let mut grads = NetGrads::zeros_like(&model.net);
    let mut total_loss = 0.0;
    for (features, label) in batch.pairs() {
        let (out, cache) = model.net.forward(&features.vector)?;
        total_loss += cfn_loss(&out, label);
        // d/df of |c - f|^2 is 2 (f - c); mean over the batch.
        let dy: Vec<f64> = out
            .iter()
            .zip(label)
            .map(|(f, c)| 2.0 * (f - c) * scale)
            .collect();
        let g = model.net.backward(&cache, &dy)?;
        grads.add_scaled(&g, 1.0);
    }
    let mean_loss = total_loss * scale;
    if !mean_loss.is_finite() {
        return Err(Error::numerical("non-finite cfn loss"));
    }
    let (net, opt) = opt_step(&model.net, &grads, &model.opt)?;
    Ok((
        CfnModel {
            net,
            d: model.d,
            opt,
        },
        mean_loss,
    ))
}

/// Inverse-count / reward-variance estimate for one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfnEstimate {
    /// `(1/d) ||f(s)||^2` clamped into `[1e-6, 1]`.
    pub inverse_count: f64,
    /// Identical to `inverse_count`; named for its role as the local reward
    /// variance fed to the bonus.
    pub variance_hat: f64,
}

/// Queries the model at a state. Read-only; safe under concurrent use.
pub fn inverse_count(model: &CfnModel, features: &StateFeatures) -> Result<CfnEstimate> {
    let (out, _) = model.net.forward(&features.vector)?;
    let raw = out.iter().map(|f| f * f).sum::<f64>() / model.d as f64;
    if !raw.is_finite() {
        return Err(Error::numerical("non-finite cfn output"));
    }
    let clamped = raw.clamp(INVERSE_COUNT_FLOOR, INVERSE_COUNT_CEIL);
    Ok(CfnEstimate {
        inverse_count: clamped,
        variance_hat: clamped,
    })
}

/// Ground-truth visit counter keyed by canonical state identity.
#[derive(Debug, Clone, Default)]
pub struct ExactCounter<K: std::hash::Hash + Eq> {
    counts: HashMap<K, u64>,
}

impl<K: std::hash::Hash + Eq> ExactCounter<K> {
    pub fn new() -> Self {
        ExactCounter {
            counts: HashMap::new(),
        }
    }

    /// Records a visit and returns the updated count.
    pub fn visit(&mut self, key: K) -> u64 {
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        *c
    }

    /// Current count; zero for unseen keys.
    pub fn query(&self, key: &K) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&K, u64)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::rng::derive_rng;

    fn feat(v: Vec<f64>) -> StateFeatures {
        StateFeatures { vector: v }
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let mut rng = derive_rng(0, "coin", &[]);
        let label = rademacher_label(20, &mut rng);
        assert_eq!(label.len(), 20);
        assert!(label.iter().all(|&c| c == 1.0 || c == -1.0));
    }

    #[test]
    fn rademacher_reproducible_at_fixed_stream() {
        let mut a = derive_rng(5, "coin", &[9]);
        let mut b = derive_rng(5, "coin", &[9]);
        assert_eq!(rademacher_label(16, &mut a), rademacher_label(16, &mut b));
    }

    #[test]
    fn rademacher_coordinates_are_fair() {
        // CLT bound: |mean| over 1e5 draws stays under 0.02 (~6 sigma).
        let mut rng = derive_rng(1, "coin", &[]);
        let d = 8;
        let n = 100_000;
        let mut sums = vec![0.0; d];
        for _ in 0..n {
            for (s, c) in sums.iter_mut().zip(rademacher_label(d, &mut rng)) {
                *s += c;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn cfn_loss_hand_values() {
        let label: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(cfn_loss(&[0.0; 20], &label), 20.0);
        assert_eq!(cfn_loss(&label, &label), 0.0);
        let negated: Vec<f64> = label.iter().map(|c| -c).collect();
        assert_eq!(cfn_loss(&negated, &label), 80.0);
    }

    #[test]
    fn batch_rejects_non_sign_labels() {
        let bad = CfnBatch::new(vec![(feat(vec![0.0]), vec![0.5, 1.0])]);
        assert!(bad.is_err());
        let empty = CfnBatch::new(vec![]);
        assert!(empty.is_err());
    }

    fn tiny_model(seed: u64, lr: f64) -> CfnModel {
        let policy = NetParams::init(&[3, 8, 2], Activation::Tanh, seed).unwrap();
        CfnModel::from_policy_trunk(&policy, 4, seed + 1, lr).unwrap()
    }

    #[test]
    fn trunk_is_copied_from_policy() {
        let policy = NetParams::init(&[3, 8, 2], Activation::Tanh, 11).unwrap();
        let model = CfnModel::from_policy_trunk(&policy, 4, 12, 1e-3).unwrap();
        assert_eq!(model.trunk().len(), 1);
        assert_eq!(model.trunk()[0], policy.layers[0]);
        assert_eq!(model.head().w.rows, 4);
        assert_eq!(model.net.output_dim(), 4);
    }

    #[test]
    fn zero_learning_rate_is_a_null_step() {
        let model = {
            let mut m = tiny_model(3, 1e-3);
            m.opt.learning_rate = 0.0;
            m
        };
        let mut rng = derive_rng(0, "coin", &[]);
        let batch =
            CfnBatch::new(vec![(feat(vec![0.1, 0.2, 0.3]), rademacher_label(4, &mut rng))])
                .unwrap();
        let (stepped, _) = train_step(&model, &batch).unwrap();
        assert_eq!(stepped.net.layers, model.net.layers);
    }

    #[test]
    fn loss_falls_on_fixed_single_state_dataset() {
        let model = tiny_model(7, 1e-2);
        let mut rng = derive_rng(7, "coin", &[]);
        let x = feat(vec![0.5, -0.25, 1.0]);
        let labels: Vec<Vec<f64>> = (0..4).map(|_| rademacher_label(4, &mut rng)).collect();
        let batch = CfnBatch::new(
            labels.iter().map(|l| (x.clone(), l.clone())).collect(),
        )
        .unwrap();
        let (_, initial_loss) = train_step(&model, &batch).unwrap();
        let mut m = model;
        let mut last = initial_loss;
        for _ in 0..200 {
            let (next, loss) = train_step(&m, &batch).unwrap();
            m = next;
            last = loss;
        }
        assert!(
            last < initial_loss,
            "loss did not fall: {initial_loss} -> {last}"
        );
    }

    #[test]
    fn converged_single_state_output_is_label_mean() {
        // Least-squares optimum for one state with n fresh labels is the
        // label mean, so the norm identity follows.
        let model = tiny_model(13, 5e-3);
        let mut rng = derive_rng(13, "coin", &[]);
        let x = feat(vec![0.8, 0.1, -0.4]);
        let n = 4;
        let labels: Vec<Vec<f64>> = (0..n).map(|_| rademacher_label(4, &mut rng)).collect();
        let mut mean = vec![0.0; 4];
        for l in &labels {
            for (m, c) in mean.iter_mut().zip(l) {
                *m += c / n as f64;
            }
        }
        let batch =
            CfnBatch::new(labels.iter().map(|l| (x.clone(), l.clone())).collect()).unwrap();
        let mut m = model;
        for _ in 0..3000 {
            let (next, _) = train_step(&m, &batch).unwrap();
            m = next;
        }
        let (out, _) = m.net.forward(&x.vector).unwrap();
        for (o, expected) in out.iter().zip(&mean) {
            assert!((o - expected).abs() < 0.02, "{o} vs {expected}");
        }
        let est = inverse_count(&m, &x).unwrap();
        let expected_inv = mean.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((est.inverse_count - expected_inv.clamp(1e-6, 1.0)).abs() < 0.02);
    }

    #[test]
    fn inverse_count_clamps_overshoot() {
        // Force a large raw output through the head bias.
        let mut model = tiny_model(2, 1e-3);
        let last = model.net.layers.last_mut().unwrap();
        last.b.iter_mut().for_each(|b| *b = 10.0);
        let est = inverse_count(&model, &feat(vec![0.0, 0.0, 0.0])).unwrap();
        assert_eq!(est.inverse_count, 1.0);
        assert_eq!(est.variance_hat, 1.0);
    }

    #[test]
    fn inverse_count_floor() {
        let policy = NetParams::zeros(&[3, 8, 2], Activation::Tanh).unwrap();
        let mut model = CfnModel::from_policy_trunk(&policy, 4, 0, 1e-3).unwrap();
        for l in &mut model.net.layers {
            l.w.data.fill(0.0);
            l.b.fill(0.0);
        }
        let est = inverse_count(&model, &feat(vec![0.0, 0.0, 0.0])).unwrap();
        assert_eq!(est.inverse_count, INVERSE_COUNT_FLOOR);
    }

    /// Statistical identity behind the estimator: the mean of
    /// `(1/d)||label mean||^2` over fresh resamples equals `1/n`.
    #[test]
    fn label_mean_norm_matches_inverse_count() {
        let d = 20;
        let resamples = 10_000;
        let mut rng = derive_rng(42, "identity", &[]);
        for n in [1usize, 2, 4, 8, 16] {
            let mut vals = Vec::with_capacity(resamples);
            for _ in 0..resamples {
                let mut mean = vec![0.0; d];
                for _ in 0..n {
                    for (m, c) in mean.iter_mut().zip(rademacher_label(d, &mut rng)) {
                        *m += c / n as f64;
                    }
                }
                vals.push(mean.iter().map(|v| v * v).sum::<f64>() / d as f64);
            }
            let m = crate::stats::mean(&vals);
            let se = crate::stats::pop_std(&vals) / (resamples as f64).sqrt();
            let expect = 1.0 / n as f64;
            assert!(
                (m - expect).abs() <= 3.0 * se.max(1e-12),
                "n={n}: mean {m} vs {expect} (se {se})"
            );
        }
    }

    #[test]
    fn estimate_falls_as_visits_accumulate() {
        // One state whose visit count doubles each round: the converged
        // estimate tracks 1/n downward across checkpoints. Individual
        // label-mean norms scatter around 1/n, hence the 10% slack.
        let d = 20;
        let policy = NetParams::init(&[3, 16, 2], Activation::Tanh, 31).unwrap();
        let mut model = CfnModel::from_policy_trunk(&policy, d, 32, 3e-3).unwrap();
        let mut rng = derive_rng(33, "coin", &[]);
        let x = feat(vec![0.3, -0.7, 0.2]);
        let mut labels: Vec<Vec<f64>> = Vec::new();
        let mut checkpoints = Vec::new();
        for round in 0..5 {
            let target = 4usize << round; // 4, 8, 16, 32, 64 visits
            while labels.len() < target {
                labels.push(rademacher_label(d, &mut rng));
            }
            let batch =
                CfnBatch::new(labels.iter().map(|l| (x.clone(), l.clone())).collect()).unwrap();
            model.opt.learning_rate = 3e-3;
            for _ in 0..700 {
                let (next, _) = train_step(&model, &batch).unwrap();
                model = next;
            }
            model.opt.learning_rate = 3e-4;
            for _ in 0..300 {
                let (next, _) = train_step(&model, &batch).unwrap();
                model = next;
            }
            checkpoints.push(inverse_count(&model, &x).unwrap().inverse_count);
        }
        for w in checkpoints.windows(2) {
            assert!(
                w[1] <= w[0] * 1.10,
                "estimate rose beyond noise: {checkpoints:?}"
            );
        }
        assert!(checkpoints.last().unwrap() < &checkpoints[0]);
    }

    #[test]
    fn exact_counter_counts() {
        let mut c: ExactCounter<&str> = ExactCounter::new();
        assert_eq!(c.query(&"a"), 0);
        c.visit("a");
        c.visit("a");
        c.visit("b");
        assert_eq!(c.visit("a"), 3);
        assert_eq!(c.query(&"a"), 3);
        assert_eq!(c.query(&"b"), 1);
        assert_eq!(c.query(&"zzz"), 0);
        assert_eq!(c.distinct(), 2);
    }
}
