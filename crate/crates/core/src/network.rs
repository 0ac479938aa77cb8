//! Shared-trunk network with option-value, intra-option policy and termination heads.
//!
//! The trunk is two rectified dense layers; the heads read the second trunk layer.
//! Gradients are computed by hand in reverse mode from a [`Tape`] recorded during the
//! forward pass. Gradients can also be taken with respect to the network input, which
//! is how attention parameters upstream of the input receive credit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};

/// Dense layer, `weight` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        d.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        d.bias.iter_mut().for_each(|b| *b = rng.gen_range(-bound..bound));
        d
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.inputs..(o + 1) * self.inputs]
    }

    #[inline]
    fn output(&self, o: usize, x: &[f64]) -> f64 {
        self.bias[o] + dot(self.row(o), x)
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| self.output(o, x)));
    }

    /// Accumulates `dy ⊗ x` into this layer treated as a gradient slot.
    fn accumulate(&mut self, o: usize, dy: f64, x: &[f64]) {
        self.bias[o] += dy;
        let inputs = self.inputs;
        self.weight[o * inputs..(o + 1) * inputs]
            .iter_mut()
            .zip(x)
            .for_each(|(w, &xi)| *w += dy * xi);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, &xi)| *yi += alpha * xi);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-softmax of a row, shifted by the row max for stability.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub num_options: usize,
    pub num_actions: usize,
}

impl NetShape {
    pub fn new(input_dim: usize, num_options: usize, num_actions: usize) -> Self {
        Self {
            input_dim,
            hidden: [60, 200],
            num_options,
            num_actions,
        }
    }
}

/// Parameter tensors in a fixed order: trunk layers, then q, policy and termination heads.
pub const TENSOR_NAMES: [&str; 5] = ["trunk.0", "trunk.1", "q_head", "pi_head", "beta_head"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub shape: NetShape,
    pub layers: [Dense; 5],
    /// Bumped on every parameter update; tapes recorded earlier become stale.
    #[serde(default)]
    pub version: u64,
}

/// Gradient slots with the same shapes as [`NetworkParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub layers: [Dense; 5],
}

const TRUNK0: usize = 0;
const TRUNK1: usize = 1;
const Q: usize = 2;
const PI: usize = 3;
const BETA: usize = 4;

fn layer_dims(shape: &NetShape) -> [(usize, usize); 5] {
    let [h1, h2] = shape.hidden;
    [
        (shape.input_dim, h1),
        (h1, h2),
        (h2, shape.num_options),
        (h2, shape.num_options * shape.num_actions),
        (h2, shape.num_options),
    ]
}

impl GradBuffer {
    pub fn zeros(shape: &NetShape) -> Self {
        Self {
            layers: layer_dims(shape).map(|(i, o)| Dense::zeros(i, o)),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= k);
        }
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub input: Vec<f64>,
    /// First trunk layer after the rectifier.
    pub hidden1: Vec<f64>,
    /// Second trunk layer after the rectifier; the heads read this.
    pub hidden2: Vec<f64>,
    version: u64,
}

/// All head outputs for one (masked) observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// One value per option.
    pub q: Vec<f64>,
    /// `num_options x num_actions`, each row a probability simplex.
    pub pi: Vec<f64>,
    pub log_pi: Vec<f64>,
    /// Termination probability per option.
    pub beta: Vec<f64>,
    pub num_actions: usize,
}

impl HeadOutputs {
    pub fn pi_row(&self, option: usize) -> &[f64] {
        &self.pi[option * self.num_actions..(option + 1) * self.num_actions]
    }

    pub fn log_pi_row(&self, option: usize) -> &[f64] {
        &self.log_pi[option * self.num_actions..(option + 1) * self.num_actions]
    }
}

/// Outputs needed when executing one option: every option's value plus that option's
/// policy row and termination probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionHeads {
    pub q: Vec<f64>,
    pub pi: Vec<f64>,
    pub log_pi: Vec<f64>,
    pub beta: f64,
}

/// Gradients of a scalar loss with respect to head pre-activations: option values,
/// policy logits (row-major like `pi`) and termination logits.
///
/// Use [`HeadGrads::add_log_pi`] and [`HeadGrads::add_beta`] to convert gradients
/// taken with respect to log-probabilities and termination probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub q: Vec<f64>,
    pub pi_logits: Vec<f64>,
    pub beta_logits: Vec<f64>,
    num_actions: usize,
}

impl HeadGrads {
    pub fn zeros(shape: &NetShape) -> Self {
        Self {
            q: vec![0.0; shape.num_options],
            pi_logits: vec![0.0; shape.num_options * shape.num_actions],
            beta_logits: vec![0.0; shape.num_options],
            num_actions: shape.num_actions,
        }
    }

    /// Adds `dL/dlog_pi` for one option row given that row's probabilities.
    pub fn add_log_pi(&mut self, option: usize, pi: &[f64], d_log_pi: &[f64]) {
        let total: f64 = d_log_pi.iter().sum();
        let row = &mut self.pi_logits[option * self.num_actions..(option + 1) * self.num_actions];
        for ((g, &d), &p) in row.iter_mut().zip(d_log_pi).zip(pi) {
            *g += d - p * total;
        }
    }

    /// Adds `dL/dbeta` for one option given its termination probability.
    pub fn add_beta(&mut self, option: usize, beta: f64, d_beta: f64) {
        self.beta_logits[option] += d_beta * beta * (1.0 - beta);
    }

    pub fn is_zero(&self) -> bool {
        self.q
            .iter()
            .chain(&self.pi_logits)
            .chain(&self.beta_logits)
            .all(|&g| g == 0.0)
    }
}

impl NetworkParams {
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Self {
        let dims = layer_dims(&shape);
        let layers = [0, 1, 2, 3, 4].map(|i| Dense::init(dims[i].0, dims[i].1, rng));
        Self {
            shape,
            layers,
            version: 0,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Runs the trunk, recording activations. Zero inputs are skipped.
    pub fn trunk(&self, input: &[f64]) -> Result<Tape> {
        if input.len() != self.shape.input_dim {
            return usage_err(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.shape.input_dim
            ));
        }
        let l0 = &self.layers[TRUNK0];
        let mut h1 = l0.bias.clone();
        for (k, &x) in input.iter().enumerate() {
            if x != 0.0 {
                for (o, h) in h1.iter_mut().enumerate() {
                    *h += l0.weight[o * l0.inputs + k] * x;
                }
            }
        }
        h1.iter_mut().for_each(|h| *h = h.max(0.0));
        let mut h2 = Vec::with_capacity(self.shape.hidden[1]);
        self.layers[TRUNK1].forward_into(&h1, &mut h2);
        h2.iter_mut().for_each(|h| *h = h.max(0.0));
        Ok(Tape {
            input: input.to_vec(),
            hidden1: h1,
            hidden2: h2,
            version: self.version,
        })
    }

    /// Evaluates all heads on a recorded trunk pass.
    pub fn heads(&self, tape: &Tape) -> HeadOutputs {
        let a = self.shape.num_actions;
        let mut q = Vec::new();
        self.layers[Q].forward_into(&tape.hidden2, &mut q);
        let mut logits = Vec::new();
        self.layers[PI].forward_into(&tape.hidden2, &mut logits);
        let mut log_pi = Vec::with_capacity(logits.len());
        for row in logits.chunks(a) {
            log_pi.extend(log_softmax(row));
        }
        let pi = log_pi.iter().map(|l| l.exp()).collect();
        let mut beta = Vec::new();
        self.layers[BETA].forward_into(&tape.hidden2, &mut beta);
        beta.iter_mut().for_each(|b| *b = sigmoid(*b));
        HeadOutputs {
            q,
            pi,
            log_pi,
            beta,
            num_actions: a,
        }
    }

    /// Like [`heads`](Self::heads) but only evaluates one option's policy and termination.
    pub fn option_heads(&self, tape: &Tape, option: usize) -> OptionHeads {
        let a = self.shape.num_actions;
        let mut q = Vec::new();
        self.layers[Q].forward_into(&tape.hidden2, &mut q);
        let logits: Vec<f64> = (option * a..(option + 1) * a)
            .map(|o| self.layers[PI].output(o, &tape.hidden2))
            .collect();
        let log_pi = log_softmax(&logits);
        let pi = log_pi.iter().map(|l| l.exp()).collect();
        let beta = sigmoid(self.layers[BETA].output(option, &tape.hidden2));
        OptionHeads {
            q,
            pi,
            log_pi,
            beta,
        }
    }

    /// Termination probability of a single option only.
    pub fn termination_prob(&self, tape: &Tape, option: usize) -> f64 {
        sigmoid(self.layers[BETA].output(option, &tape.hidden2))
    }

    /// Value of a single option only.
    pub fn option_value(&self, tape: &Tape, option: usize) -> f64 {
        self.layers[Q].output(option, &tape.hidden2)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(HeadOutputs, Tape)> {
        let tape = self.trunk(input)?;
        Ok((self.heads(&tape), tape))
    }

    /// Reverse pass. Parameter gradients are accumulated into `param_grads` when given;
    /// the gradient with respect to the input is returned when `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        grads: &HeadGrads,
        param_grads: Option<&mut GradBuffer>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if tape.version != self.version {
            return usage_err("tape was recorded before the last parameter update");
        }
        let [h1n, h2n] = self.shape.hidden;
        let mut param_grads = param_grads;
        let mut d_h2 = vec![0.0; h2n];
        for (layer, g) in [(Q, &grads.q), (PI, &grads.pi_logits), (BETA, &grads.beta_logits)] {
            let dense = &self.layers[layer];
            for (o, &dy) in g.iter().enumerate() {
                if dy == 0.0 {
                    continue;
                }
                axpy(dy, dense.row(o), &mut d_h2);
                if let Some(pg) = param_grads.as_deref_mut() {
                    pg.layers[layer].accumulate(o, dy, &tape.hidden2);
                }
            }
        }
        // Rectifier: pass gradient only where the unit was active.
        for (d, &h) in d_h2.iter_mut().zip(&tape.hidden2) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        let l1 = &self.layers[TRUNK1];
        let mut d_h1 = vec![0.0; h1n];
        for (o, &dy) in d_h2.iter().enumerate() {
            if dy == 0.0 {
                continue;
            }
            axpy(dy, l1.row(o), &mut d_h1);
            if let Some(pg) = param_grads.as_deref_mut() {
                pg.layers[TRUNK1].accumulate(o, dy, &tape.hidden1);
            }
        }
        for (d, &h) in d_h1.iter_mut().zip(&tape.hidden1) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        let l0 = &self.layers[TRUNK0];
        if let Some(pg) = param_grads.as_deref_mut() {
            let slot = &mut pg.layers[TRUNK0];
            for (o, &dy) in d_h1.iter().enumerate() {
                if dy == 0.0 {
                    continue;
                }
                slot.bias[o] += dy;
                for (k, &x) in tape.input.iter().enumerate() {
                    if x != 0.0 {
                        slot.weight[o * l0.inputs + k] += dy * x;
                    }
                }
            }
        }
        if !want_input {
            return Ok(None);
        }
        let mut d_x = vec![0.0; self.shape.input_dim];
        for (o, &dy) in d_h1.iter().enumerate() {
            if dy != 0.0 {
                axpy(dy, l0.row(o), &mut d_x);
            }
        }
        Ok(Some(d_x))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Parameter groups that can be frozen or given their own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Trunk,
    QHead,
    PolicyHead,
    TerminationHead,
    Attention,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        Self::Trunk,
        Self::QHead,
        Self::PolicyHead,
        Self::TerminationHead,
        Self::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trunk => "trunk",
            Self::QHead => "q_head",
            Self::PolicyHead => "policy_head",
            Self::TerminationHead => "termination_head",
            Self::Attention => "attention",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Group owning network tensor `layer` (index into [`NetworkParams::layers`]).
    pub fn of_layer(layer: usize) -> Self {
        match layer {
            TRUNK0 | TRUNK1 => Self::Trunk,
            Q => Self::QHead,
            PI => Self::PolicyHead,
            _ => Self::TerminationHead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            eps: 1e-5,
        }
    }
}

/// RMSprop state for a flat list of parameters:
/// `v <- decay v + (1 - decay) g^2`, `p <- p - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub square_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, len: usize) -> Self {
        Self {
            config,
            square_avg: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        let RmsPropConfig { decay, eps } = self.config;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.square_avg) {
            *v = decay * *v + (1.0 - decay) * g * g;
            *p -= lr * g / (v.sqrt() + eps);
        }
    }
}

/// One RMSprop accumulator per network tensor (weights then bias), in [`TENSOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptimizer {
    pub weights: Vec<RmsProp>,
    pub biases: Vec<RmsProp>,
}

impl NetworkOptimizer {
    pub fn new(params: &NetworkParams, config: RmsPropConfig) -> Self {
        Self {
            weights: params.layers.iter().map(|l| RmsProp::new(config, l.weight.len())).collect(),
            biases: params.layers.iter().map(|l| RmsProp::new(config, l.bias.len())).collect(),
        }
    }

    /// Applies one update; `lr_of` gives the learning rate of each group, `None` freezes it.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        grads: &GradBuffer,
        lr_of: impl Fn(ParamGroup) -> Option<f64>,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(crate::Error::Training("non-finite network gradient".into()));
        }
        for (i, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
            if let Some(lr) = lr_of(ParamGroup::of_layer(i)) {
                self.weights[i].step(&mut layer.weight, &g.weight, lr);
                self.biases[i].step(&mut layer.bias, &g.bias, lr);
            }
        }
        params.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> NetworkParams {
        let mut shape = NetShape::new(8, 2, 4);
        shape.hidden = [6, 7];
        NetworkParams::init(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Straightforward matrix arithmetic, written independently of the layer helpers.
    fn naive_forward(p: &NetworkParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mv = |d: &Dense, v: &[f64]| -> Vec<f64> {
            (0..d.outputs)
                .map(|o| d.bias[o] + (0..d.inputs).map(|i| d.weight[o * d.inputs + i] * v[i]).sum::<f64>())
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|z| if z > 0.0 { z } else { 0.0 }).collect::<Vec<_>>();
        let h1 = relu(mv(&p.layers[0], x));
        let h2 = relu(mv(&p.layers[1], &h1));
        let q = mv(&p.layers[2], &h2);
        let logits = mv(&p.layers[3], &h2);
        let a = p.shape.num_actions;
        let mut pi = Vec::new();
        for row in logits.chunks(a) {
            let e: Vec<f64> = row.iter().map(|z| z.exp()).collect();
            let s: f64 = e.iter().sum();
            pi.extend(e.into_iter().map(|v| v / s));
        }
        let beta = mv(&p.layers[4], &h2).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        (q, pi, beta)
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let p = small_net(seed);
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (out, _) = p.forward(&x).unwrap();
            let (q, pi, beta) = naive_forward(&p, &x);
            for (a, b) in out.q.iter().zip(&q).chain(out.pi.iter().zip(&pi)).chain(out.beta.iter().zip(&beta)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_input_depends_only_on_biases() {
        let mut p = small_net(1);
        let x = vec![0.0; 8];
        let (before, _) = p.forward(&x).unwrap();
        p.layers[0].weight.iter_mut().for_each(|w| *w += 3.0);
        let (after, _) = p.forward(&x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn forward_is_pure() {
        let p = small_net(2);
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let (a, _) = p.forward(&x).unwrap();
        let (b, _) = p.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outputs_are_valid_distributions() {
        let p = small_net(3);
        let (out, tape) = p.forward(&[0.5; 8]).unwrap();
        for o in 0..2 {
            let s: f64 = out.pi_row(o).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(out.beta.iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(tape.hidden1.iter().chain(&tape.hidden2).all(|&h| h >= 0.0));
    }

    #[test]
    fn option_heads_agree_with_full_heads() {
        let p = small_net(4);
        let tape = p.trunk(&[0.3; 8]).unwrap();
        let full = p.heads(&tape);
        for o in 0..2 {
            let part = p.option_heads(&tape, o);
            assert_eq!(part.q, full.q);
            assert_eq!(part.pi.as_slice(), full.pi_row(o));
            assert_eq!(part.beta, full.beta[o]);
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let p = small_net(0);
        assert!(matches!(p.forward(&[0.0; 3]), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn q_only_loss_touches_trunk_and_q_head() {
        let p = small_net(6);
        let tape = p.trunk(&[0.7; 8]).unwrap();
        let mut hg = HeadGrads::zeros(&p.shape);
        hg.q[1] = 1.0;
        let mut g = GradBuffer::zeros(&p.shape);
        p.backward(&tape, &hg, Some(&mut g), false).unwrap();
        for (i, l) in g.layers.iter().enumerate() {
            let nonzero = l.weight.iter().chain(&l.bias).any(|&v| v != 0.0);
            match ParamGroup::of_layer(i) {
                ParamGroup::PolicyHead | ParamGroup::TerminationHead => assert!(!nonzero),
                ParamGroup::QHead => assert!(nonzero),
                _ => {}
            }
        }
    }

    #[test]
    fn stale_tape_rejected() {
        let mut p = small_net(7);
        let tape = p.trunk(&[1.0; 8]).unwrap();
        let g = GradBuffer::zeros(&p.shape);
        let mut opt = NetworkOptimizer::new(&p, RmsPropConfig::default());
        opt.step(&mut p, &g, |_| Some(1e-3)).unwrap();
        let hg = HeadGrads::zeros(&p.shape);
        assert!(matches!(p.backward(&tape, &hg, None, true), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform_row() {
        let pi = [0.25; 4];
        let log_pi: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
        // L = -H = sum p log p ; dL/dlog p_j = p_j (log p_j + 1)
        let d: Vec<f64> = pi.iter().zip(&log_pi).map(|(p, l)| p * (l + 1.0)).collect();
        let mut hg = HeadGrads::zeros(&NetShape::new(8, 1, 4));
        hg.add_log_pi(0, &pi, &d);
        assert!(hg.pi_logits.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn rmsprop_zero_gradient_only_decays() {
        let mut opt = RmsProp::new(RmsPropConfig::default(), 2);
        opt.square_avg = vec![1.0, 4.0];
        let mut p = vec![0.5, -0.5];
        opt.step(&mut p, &[0.0, 0.0], 1e-3);
        assert_eq!(p, vec![0.5, -0.5]);
        assert_eq!(opt.square_avg, vec![0.99, 3.96]);
    }

    #[test]
    fn rmsprop_matches_scalar_recurrence() {
        let cfg = RmsPropConfig::default();
        let mut opt = RmsProp::new(cfg, 1);
        let (g, lr) = (0.3, 1e-3);
        let mut p = [1.0];
        let (mut v_ref, mut p_ref) = (0.0f64, 1.0f64);
        let mut last_update = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            opt.step(&mut p, &[g], lr);
            v_ref = 0.99 * v_ref + 0.01 * g * g;
            p_ref -= lr * g / (v_ref.sqrt() + 1e-5);
            assert!((p[0] - p_ref).abs() < 1e-10);
            last_update = before - p[0];
        }
        // With a constant gradient the step tends to lr * sign(g) * |g| / (|g| + eps).
        let limit = lr * g / (g + 1e-5);
        assert!((last_update - limit).abs() < 1e-10);
    }

    #[test]
    fn optimizer_rejects_non_finite_gradients() {
        let mut p = small_net(8);
        let mut g = GradBuffer::zeros(&p.shape);
        g.layers[2].bias[0] = f64::NAN;
        let mut opt = NetworkOptimizer::new(&p, RmsPropConfig::default());
        assert!(matches!(opt.step(&mut p, &g, |_| Some(1e-3)), Err(crate::Error::Training(_))));
    }
}
