//! Minimal feedforward networks with explicit forward/backward passes and
//! optimizers. No autodiff: gradients are hand-derived and verified against
//! finite differences. Shared by the policy head and the bonus estimator.
//!
//! All functions are pure: they take parameters by reference and return new
//! values, so callers may share nets across threads freely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative given pre-activation `z` and post-activation `a`.
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Row-major dense matrix, `rows` outputs by `cols` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Parameters of a feedforward net: affine layers with `activation` after
/// every hidden layer and a linear final layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub seed: u64,
    /// Bumped on every optimizer step; forward caches record it so a stale
    /// cache can be rejected in backward.
    #[serde(default)]
    pub version: u64,
}

impl NetParams {
    /// Weights drawn uniformly with scale `1/sqrt(fan_in)`, biases zero.
    /// Deterministic in `seed`.
    pub fn init(shape: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_shape(shape)?;
        let mut rng = derive_rng(seed, "net-init", &[]);
        let mut layers = Vec::with_capacity(shape.len() - 1);
        for win in shape.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in w.data.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
            });
        }
        Ok(NetParams {
            layers,
            activation,
            seed,
            version: 0,
        })
    }

    /// All-zero parameters; forward output equals the (zero) bias, which
    /// makes a softmax head exactly uniform.
    pub fn zeros(shape: &[usize], activation: Activation) -> Result<Self> {
        let mut p = Self::init(shape, activation, 0)?;
        for layer in &mut p.layers {
            layer.w.data.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(p)
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.cols];
        s.extend(self.layers.iter().map(|l| l.w.rows));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty net").w.rows
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data.len() + l.b.len())
            .sum()
    }

    /// Forward pass. Returns the output and a cache of intermediates for
    /// [`NetParams::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "forward input dim {} does not match net input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut a: Vec<f64> = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.b.clone();
            for (zr, row) in z.iter_mut().zip(layer.w.data.chunks_exact(layer.w.cols)) {
                let mut acc = 0.0;
                for (wv, av) in row.iter().zip(&a) {
                    acc += wv * av;
                }
                *zr += acc;
            }
            let activated = if li + 1 == n_layers {
                z.clone() // linear final layer
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(activated.clone());
            a = activated;
        }
        Ok((
            a,
            ForwardCache {
                input: x.to_vec(),
                pre,
                post,
                version: self.version,
            },
        ))
    }

    /// Gradients of `dy . y` with respect to every parameter, where `y` is
    /// the output the cached forward pass produced.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<NetGrads> {
        if cache.version != self.version {
            return Err(Error::usage(
                "stale forward cache: parameters changed since the forward pass",
            ));
        }
        if cache.pre.len() != self.layers.len() || cache.input.len() != self.input_dim() {
            return Err(Error::usage("forward cache does not match this net"));
        }
        if dy.len() != self.output_dim() {
            return Err(Error::usage(format!(
                "cotangent dim {} does not match net output {}",
                dy.len(),
                self.output_dim()
            )));
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = dy.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a_prev: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.post[li - 1]
            };
            for (r, &d) in delta.iter().enumerate() {
                grads.b[li][r] += d;
                let grow = &mut grads.w[li].data[r * layer.w.cols..(r + 1) * layer.w.cols];
                for (g, av) in grow.iter_mut().zip(a_prev) {
                    *g += d * av;
                }
            }
            if li > 0 {
                let mut prev_delta = vec![0.0; layer.w.cols];
                for (&d, row) in delta.iter().zip(layer.w.data.chunks_exact(layer.w.cols)) {
                    for (pd, wv) in prev_delta.iter_mut().zip(row) {
                        *pd += d * wv;
                    }
                }
                for (c, pd) in prev_delta.iter_mut().enumerate() {
                    *pd *= self
                        .activation
                        .derivative(cache.pre[li - 1][c], cache.post[li - 1][c]);
                }
                delta = prev_delta;
            }
        }
        Ok(grads)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::config(
            "net shape needs at least an input and an output dimension",
        ));
    }
    if shape.contains(&0) {
        return Err(Error::config("net dimensions must all be >= 1"));
    }
    Ok(())
}

/// Intermediates recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    version: u64,
}

/// Gradient (or moment) buffers shaped like a [`NetParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGrads {
    pub w: Vec<Matrix>,
    pub b: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(params: &NetParams) -> Self {
        NetGrads {
            w: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.w.rows, l.w.cols))
                .collect(),
            b: params.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &NetGrads, scale: f64) {
        for (sw, ow) in self.w.iter_mut().zip(&other.w) {
            for (s, o) in sw.data.iter_mut().zip(&ow.data) {
                *s += o * scale;
            }
        }
        for (sb, ob) in self.b.iter_mut().zip(&other.b) {
            for (s, o) in sb.iter_mut().zip(ob) {
                *s += o * scale;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.w {
            w.data.iter_mut().for_each(|v| *v *= factor);
        }
        for b in &mut self.b {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|m| m.data.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .chain(self.b.iter().flat_map(|b| b.iter().copied()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    AdamW,
}

/// Optimizer state; moment buffers mirror the parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: NetGrads,
    pub v: NetGrads,
    pub t: u64,
}

impl OptimState {
    pub fn sgd(params: &NetParams, learning_rate: f64) -> Result<Self> {
        Self::new(OptimKind::Sgd, params, learning_rate, 0.9, 0.999, 1e-8, 0.0)
    }

    pub fn adamw(params: &NetParams, learning_rate: f64, weight_decay: f64) -> Result<Self> {
        Self::new(
            OptimKind::AdamW,
            params,
            learning_rate,
            0.9,
            0.999,
            1e-8,
            weight_decay,
        )
    }

    pub fn new(
        kind: OptimKind,
        params: &NetParams,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(OptimState {
            kind,
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: NetGrads::zeros_like(params),
            v: NetGrads::zeros_like(params),
            t: 0,
        })
    }

    /// Replaces the learning rate, keeping moments and the step counter.
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// One optimizer step. SGD: `p - lr*g`. AdamW: bias-corrected moments with
/// decoupled weight decay. Returns updated parameters (version bumped) and
/// optimizer state; signals a numerical fault on non-finite gradients without
/// touching the inputs.
pub fn opt_step(
    params: &NetParams,
    grads: &NetGrads,
    opt: &OptimState,
) -> Result<(NetParams, OptimState)> {
    if grads.w.len() != params.layers.len() {
        return Err(Error::usage("gradient shape does not match parameters"));
    }
    for (g, l) in grads.w.iter().zip(&params.layers) {
        if g.rows != l.w.rows || g.cols != l.w.cols {
            return Err(Error::usage("gradient shape does not match parameters"));
        }
    }
    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient in optimizer step"));
    }
    let mut new_params = params.clone();
    let mut new_opt = opt.clone();
    new_opt.t += 1;
    let lr = opt.learning_rate;
    match opt.kind {
        OptimKind::Sgd => {
            for (li, layer) in new_params.layers.iter_mut().enumerate() {
                for (p, g) in layer.w.data.iter_mut().zip(&grads.w[li].data) {
                    *p -= lr * g;
                }
                for (p, g) in layer.b.iter_mut().zip(&grads.b[li]) {
                    *p -= lr * g;
                }
            }
        }
        OptimKind::AdamW => {
            let t = new_opt.t as i32;
            let bc1 = 1.0 - opt.beta1.powi(t);
            let bc2 = 1.0 - opt.beta2.powi(t);
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * *p);
            };
            for (li, layer) in new_params.layers.iter_mut().enumerate() {
                for i in 0..layer.w.data.len() {
                    update(
                        &mut layer.w.data[i],
                        grads.w[li].data[i],
                        &mut new_opt.m.w[li].data[i],
                        &mut new_opt.v.w[li].data[i],
                    );
                }
                for i in 0..layer.b.len() {
                    update(
                        &mut layer.b[i],
                        grads.b[li][i],
                        &mut new_opt.m.b[li][i],
                        &mut new_opt.v.b[li][i],
                    );
                }
            }
        }
    }
    new_params.version = params.version + 1;
    Ok((new_params, new_opt))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = NetParams::init(&[4, 8, 3], Activation::Tanh, 7).unwrap();
        let b = NetParams::init(&[4, 8, 3], Activation::Tanh, 7).unwrap();
        assert_eq!(a, b);
        let c = NetParams::init(&[4, 8, 3], Activation::Tanh, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_scale_respects_fan_in() {
        let p = NetParams::init(&[16, 4], Activation::Tanh, 1).unwrap();
        let bound = 1.0 / 4.0;
        assert!(p.layers[0].w.data.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn degenerate_shapes_rejected() {
        assert!(NetParams::init(&[], Activation::Tanh, 0).is_err());
        assert!(NetParams::init(&[4], Activation::Tanh, 0).is_err());
        assert!(NetParams::init(&[4, 0, 3], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn zero_weights_forward_to_bias() {
        let mut p = NetParams::zeros(&[4, 3], Activation::Tanh).unwrap();
        p.layers[0].b = vec![0.5, -1.0, 2.0];
        for x in [[0.0, 0.0, 0.0, 0.0], [1.0, -2.0, 3.0, 4.0]] {
            let (y, _) = p.forward(&x).unwrap();
            assert_eq!(y, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut p = NetParams::zeros(&[2, 2], Activation::Tanh).unwrap();
        *p.layers[0].w.at_mut(0, 0) = 1.0;
        *p.layers[0].w.at_mut(1, 1) = 1.0;
        let (y, _) = p.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn tanh_hidden_is_odd_at_zero() {
        let p = NetParams::init(&[3, 5, 2], Activation::Tanh, 3).unwrap();
        let (y, _) = p.forward(&[0.0, 0.0, 0.0]).unwrap();
        // biases are zero at init, so every pre-activation is 0 and tanh(0)=0
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let p = NetParams::init(&[3, 2], Activation::Tanh, 0).unwrap();
        assert!(p.forward(&[1.0, 2.0]).is_err());
    }

    /// Independent straight-line oracle: a second forward implementation with
    /// no shared code, written directly from the layer equations.
    fn forward_oracle(p: &NetParams, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (li, layer) in p.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.w.rows];
            #[allow(clippy::needless_range_loop)]
            for r in 0..layer.w.rows {
                let mut z = layer.b[r];
                for c in 0..layer.w.cols {
                    z += layer.w.at(r, c) * a[c];
                }
                next[r] = if li + 1 == p.layers.len() {
                    z
                } else {
                    match p.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Relu => z.max(0.0),
                    }
                };
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_independent_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::derive_rng(11, "net-test", &[]);
        for seed in 0..20u64 {
            let p = NetParams::init(&[5, 7, 4], Activation::Tanh, seed).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (y, _) = p.forward(&x).unwrap();
            let z = forward_oracle(&p, &x);
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_grads() {
        let p = NetParams::init(&[3, 4, 2], Activation::Tanh, 5).unwrap();
        let (_, cache) = p.forward(&[0.3, -0.2, 0.9]).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn backward_linear_net_is_outer_product() {
        let p = NetParams::init(&[3, 2], Activation::Tanh, 9).unwrap();
        let x = [0.5, -1.5, 2.0];
        let dy = [2.0, -3.0];
        let (_, cache) = p.forward(&x).unwrap();
        let g = p.backward(&cache, &dy).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((g.w[0].at(r, c) - dy[r] * x[c]).abs() < 1e-14);
            }
            assert!((g.b[0][r] - dy[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let p = NetParams::init(&[3, 2], Activation::Tanh, 1).unwrap();
        let (_, cache) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        let opt = OptimState::sgd(&p, 0.1).unwrap();
        let g = NetGrads::zeros_like(&p);
        let (p2, _) = opt_step(&p, &g, &opt).unwrap();
        assert!(matches!(p2.backward(&cache, &[1.0, 0.0]), Err(Error::Usage(_))));
    }

    /// Central finite differences of `dy . forward(x)` over every parameter.
    fn fd_grads(p: &NetParams, x: &[f64], dy: &[f64], h: f64) -> NetGrads {
        let objective = |p: &NetParams| -> f64 {
            let (y, _) = p.forward(x).unwrap();
            y.iter().zip(dy).map(|(a, b)| a * b).sum()
        };
        let mut g = NetGrads::zeros_like(p);
        for li in 0..p.layers.len() {
            for i in 0..p.layers[li].w.data.len() {
                let mut plus = p.clone();
                plus.layers[li].w.data[i] += h;
                let mut minus = p.clone();
                minus.layers[li].w.data[i] -= h;
                g.w[li].data[i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
            }
            for i in 0..p.layers[li].b.len() {
                let mut plus = p.clone();
                plus.layers[li].b[i] += h;
                let mut minus = p.clone();
                minus.layers[li].b[i] -= h;
                g.b[li][i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
            }
        }
        g
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences() {
        use rand::Rng;
        for seed in 0..10u64 {
            let p = NetParams::init(&[4, 6, 3], Activation::Tanh, seed).unwrap();
            let mut rng = crate::rng::derive_rng(seed, "fd-test", &[]);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dy: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, cache) = p.forward(&x).unwrap();
            let analytic = p.backward(&cache, &dy).unwrap();
            let numeric = fd_grads(&p, &x, &dy, 1e-4);
            for (a, n) in analytic.values().zip(numeric.values()) {
                assert!(rel_err(a, n) < 1e-5, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn sgd_one_step_arithmetic() {
        let mut p = NetParams::zeros(&[1, 1], Activation::Tanh).unwrap();
        *p.layers[0].w.at_mut(0, 0) = 1.0;
        let opt = OptimState::sgd(&p, 0.1).unwrap();
        let mut g = NetGrads::zeros_like(&p);
        g.w[0].data[0] = 2.0;
        let (p2, opt2) = opt_step(&p, &g, &opt).unwrap();
        assert!((p2.layers[0].w.at(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(opt2.t, 1);
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_fixed_point() {
        let p = NetParams::init(&[3, 2], Activation::Tanh, 2).unwrap();
        let opt = OptimState::adamw(&p, 1e-3, 0.0).unwrap();
        let g = NetGrads::zeros_like(&p);
        let (p2, _) = opt_step(&p, &g, &opt).unwrap();
        for (l1, l2) in p.layers.iter().zip(&p2.layers) {
            assert_eq!(l1.w.data, l2.w.data);
            assert_eq!(l1.b, l2.b);
        }
    }

    #[test]
    fn adamw_first_step_is_minus_lr() {
        // Bias correction makes the very first update -lr * g/|g| for any
        // uniform gradient, so with g = 1 each coordinate moves by -1e-3.
        let p = NetParams::init(&[2, 2], Activation::Tanh, 4).unwrap();
        let opt = OptimState::adamw(&p, 1e-3, 0.0).unwrap();
        let mut g = NetGrads::zeros_like(&p);
        g.w.iter_mut().for_each(|m| m.data.fill(1.0));
        g.b.iter_mut().for_each(|b| b.fill(1.0));
        let (p2, _) = opt_step(&p, &g, &opt).unwrap();
        for (l1, l2) in p.layers.iter().zip(&p2.layers) {
            for (a, b) in l1.w.data.iter().zip(&l2.w.data) {
                assert!((b - (a - 1e-3)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn nonfinite_grads_are_a_training_fault() {
        let p = NetParams::init(&[2, 2], Activation::Tanh, 0).unwrap();
        let opt = OptimState::sgd(&p, 0.1).unwrap();
        let mut g = NetGrads::zeros_like(&p);
        g.w[0].data[0] = f64::NAN;
        assert!(matches!(
            opt_step(&p, &g, &opt),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_params() {
        let p = NetParams::init(&[4, 8, 3], Activation::Relu, 42).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: NetParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, q);
    }
}
