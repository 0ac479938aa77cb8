//! Per-option attention masks over the observation, with the diversity and
//! temporal-regularization losses.
//!
//! Learnable masks are parametrized as `h = sigmoid(logits)`, so every value stays in
//! `(0, 1)`. Hardcoded masks hold fixed values in `{0, 1}` and ignore updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::GridLayout;
use crate::error::{config_err, usage_err, Result};
use crate::network::{sigmoid, RmsProp, RmsPropConfig};

/// Added to the product of norms in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBank {
    num_options: usize,
    dim: usize,
    learnable: bool,
    /// `num_options x dim`, row-major. Unused for hardcoded banks.
    logits: Vec<f64>,
    /// `num_options x dim`, row-major.
    values: Vec<f64>,
    optimizer: RmsProp,
}

/// `h_ω ⊙ s` for one option.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedObservation {
    pub values: Vec<f64>,
    pub option: usize,
}

impl AttentionBank {
    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(num_options: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let logits: Vec<f64> = (0..num_options * dim)
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
            .collect();
        Self::from_logits(num_options, dim, logits)
    }

    pub fn from_logits(num_options: usize, dim: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), num_options * dim);
        let values = logits.iter().map(|&z| sigmoid(z)).collect();
        Self {
            num_options,
            dim,
            learnable: true,
            logits,
            values,
            optimizer: RmsProp::new(RmsPropConfig::default(), num_options * dim),
        }
    }

    /// A fixed bank; values must lie in `[0, 1]`.
    pub fn fixed(num_options: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_options * dim {
            return usage_err("attention values have the wrong length");
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return config_err("fixed attention values must lie in [0, 1]");
        }
        Ok(Self {
            num_options,
            dim,
            learnable: false,
            logits: vec![0.0; num_options * dim],
            values,
            optimizer: RmsProp::new(RmsPropConfig::default(), 0),
        })
    }

    /// All-ones fixed bank: masking becomes the identity.
    pub fn identity(num_options: usize, dim: usize) -> Self {
        Self::fixed(num_options, dim, vec![1.0; num_options * dim]).unwrap()
    }

    /// Fixed masks that are 1 on the assigned rooms and 0 elsewhere.
    ///
    /// A hallway cell counts as part of both rooms it connects.
    pub fn hardcode_rooms(layout: &GridLayout, assignment: &[Vec<usize>]) -> Result<Self> {
        let dim = layout.num_states();
        let rooms = layout.rooms();
        let mut values = vec![0.0; assignment.len() * dim];
        for (option, room_ids) in assignment.iter().enumerate() {
            if room_ids.is_empty() {
                return config_err(format!("option {option} has no assigned room"));
            }
            let row = &mut values[option * dim..(option + 1) * dim];
            for &r in room_ids {
                let Some(room) = rooms.get(r) else {
                    return config_err(format!("room {r} does not exist (layout has {})", rooms.len()));
                };
                for &s in &room.states {
                    row[s] = 1.0;
                }
                for &h in &room.hallways {
                    row[layout.hallway(h).unwrap().state] = 1.0;
                }
            }
        }
        if assignment.is_empty() {
            return config_err("room assignment covers no options");
        }
        Self::fixed(assignment.len(), dim, values)
    }

    /// Rooms dealt round-robin: option `i` gets room `i mod rooms`.
    pub fn round_robin_rooms(layout: &GridLayout, num_options: usize) -> Result<Self> {
        let n = layout.rooms().len();
        if n == 0 {
            return config_err("layout has no rooms");
        }
        let assignment: Vec<Vec<usize>> = (0..num_options).map(|o| vec![o % n]).collect();
        Self::hardcode_rooms(layout, &assignment)
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, option: usize) -> &[f64] {
        &self.values[option * self.dim..(option + 1) * self.dim]
    }

    #[inline]
    pub fn value(&self, option: usize, state: usize) -> f64 {
        self.values[option * self.dim + state]
    }

    pub fn mask(&self, observation: &[f64], option: usize) -> Result<MaskedObservation> {
        if observation.len() != self.dim {
            return usage_err(format!(
                "observation has length {}, attention expects {}",
                observation.len(),
                self.dim
            ));
        }
        if option >= self.num_options {
            return usage_err(format!("option {option} out of range"));
        }
        let values = self.row(option).iter().zip(observation).map(|(h, s)| h * s).collect();
        Ok(MaskedObservation { values, option })
    }

    pub fn mask_all(&self, observation: &[f64]) -> Result<Vec<MaskedObservation>> {
        (0..self.num_options).map(|o| self.mask(observation, o)).collect()
    }

    /// Masked one-hot observation `h_ω[state] e_state`.
    pub fn mask_one_hot(&self, state: usize, option: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[state] = self.value(option, state);
        v
    }

    /// Chains `dL/dh` to `dL/dlogits` through the sigmoid.
    pub fn logit_grads(&self, d_values: &[f64]) -> Vec<f64> {
        d_values
            .iter()
            .zip(&self.values)
            .map(|(d, h)| d * h * (1.0 - h))
            .collect()
    }

    /// One RMSprop step on the logits from `dL/dh`. No-op for hardcoded banks.
    pub fn apply_grads(&mut self, d_values: &[f64], lr: f64, config: RmsPropConfig) -> Result<()> {
        if !self.learnable {
            return Ok(());
        }
        if d_values.iter().any(|g| !g.is_finite()) {
            return Err(crate::Error::Training("non-finite attention gradient".into()));
        }
        let grads = self.logit_grads(d_values);
        self.optimizer.config = config;
        self.optimizer.step(&mut self.logits, &grads, lr);
        for (h, &z) in self.values.iter_mut().zip(&self.logits) {
            *h = sigmoid(z);
        }
        Ok(())
    }

    pub fn optimizer(&self) -> &RmsProp {
        &self.optimizer
    }

    /// Sum over option pairs `i < j` of the cosine similarity between `h_i` and `h_j`.
    pub fn cosine_diversity_loss(&self) -> (f64, Vec<f64>) {
        cosine_diversity(&self.values, self.num_options, self.dim)
    }

    /// Sum over options and adjacent trajectory steps of `|h_ω[s_t] - h_ω[s_{t+1}]|`.
    pub fn temporal_reg_loss(&self, trajectory: &[usize]) -> (f64, Vec<f64>) {
        temporal_regularization(&self.values, self.num_options, self.dim, trajectory)
    }
}

/// Loss and gradient with respect to `values` (`num_options x dim`).
pub fn cosine_diversity(values: &[f64], num_options: usize, dim: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; values.len()];
    let rows: Vec<&[f64]> = values.chunks(dim).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut loss = 0.0;
    for i in 0..num_options {
        for j in i + 1..num_options {
            let dot: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
            let denom = norms[i] * norms[j] + COSINE_EPS;
            loss += dot / denom;
            // d(dot/denom)/dh_i = h_j/denom - dot/denom^2 * n_j * h_i/n_i
            for (a, b) in [(i, j), (j, i)] {
                let coef = if norms[a] > 0.0 {
                    dot / (denom * denom) * norms[b] / norms[a]
                } else {
                    0.0
                };
                let g = &mut grad[a * dim..(a + 1) * dim];
                for k in 0..dim {
                    g[k] += rows[b][k] / denom - coef * rows[a][k];
                }
            }
        }
    }
    (loss, grad)
}

/// Loss and (sub)gradient with respect to `values`; the subgradient of `|0|` is 0.
pub fn temporal_regularization(
    values: &[f64],
    num_options: usize,
    dim: usize,
    trajectory: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; values.len()];
    let mut loss = 0.0;
    for w in trajectory.windows(2) {
        let (a, b) = (w[0], w[1]);
        for o in 0..num_options {
            let diff = values[o * dim + a] - values[o * dim + b];
            loss += diff.abs();
            if diff != 0.0 {
                let s = diff.signum();
                grad[o * dim + a] += s;
                grad[o * dim + b] -= s;
            }
        }
    }
    (loss, grad)
}
