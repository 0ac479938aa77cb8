use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::network::RmsPropConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Attention option-critic.
    Aoc,
    /// Option-critic: identity attention and no attention losses.
    Oc,
}

/// How option attentions are produced in AOC mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Randomly initialized logits, trained.
    Learnable,
    /// Fixed all-ones masks.
    Identity,
    /// Fixed masks: option `i` sees room `i mod rooms` plus its hallways.
    Rooms,
}

/// Which objective the attention logits descend, besides the diversity and temporal terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionObjective {
    /// Ascend `Q_Ω(o_ω, ω)` with the network held fixed.
    ValueAscent,
    #[default]
    /// Descend the network loss (value, policy, entropy and termination terms) through the masks.
    CompositeLoss,
    /// Both of the above.
    Both,
}

impl AttentionObjective {
    pub fn uses_value(self) -> bool {
        matches!(self, Self::ValueAscent | Self::Both)
    }

    pub fn uses_loss(self) -> bool {
        matches!(self, Self::CompositeLoss | Self::Both)
    }
}

/// `start -> end` linearly over `steps` per-worker steps, then held at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LinearSchedule {
    pub const fn new(start: f64, end: f64, steps: u64) -> Self {
        Self { start, end, steps }
    }

    pub fn value(&self, t: u64) -> f64 {
        if self.steps == 0 || t >= self.steps {
            return self.end;
        }
        let frac = t as f64 / self.steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub mode: Mode,
    pub num_options: usize,
    pub gamma: f64,
    /// Learning rate for the trunk and the option-value head.
    pub lr: f64,
    /// Intra-option policy head.
    pub lr_theta: f64,
    /// Termination head.
    pub lr_nu: f64,
    /// Attention logits.
    pub lr_phi: f64,
    /// Random-option probability of the policy over options.
    pub epsilon: LinearSchedule,
    /// Entropy bonus weight on the intra-option policies.
    pub entropy: LinearSchedule,
    /// Weight of the cosine-similarity (diversity) loss.
    pub w1: f64,
    /// Weight of the temporal-regularization loss.
    pub w2: f64,
    pub rollout_length: usize,
    pub num_workers: usize,
    pub attention: AttentionMode,
    pub attention_objective: AttentionObjective,
    /// Initial attention logits are uniform in `[-scale, scale]`.
    pub attention_init_scale: f64,
    pub hidden: [usize; 2],
    pub rmsprop: RmsPropConfig,
    /// Subtract `Q_Ω(o_ω, ω)` from the return before weighting `∇ log π`.
    pub policy_baseline: bool,
    /// Take the bootstrap max and the option-level value over `Q_Ω(o'_ω, ·)`, i.e. every
    /// candidate option evaluated on the executing option's masked observation.
    pub literal_max: bool,
    /// Global L2 bound on the network gradient of one update; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Aoc,
            num_options: 4,
            gamma: 0.99,
            lr: 1e-3,
            lr_theta: 1e-3,
            lr_nu: 1e-3,
            lr_phi: 1e-3,
            epsilon: LinearSchedule::new(1.0, 0.1, 100_000),
            entropy: LinearSchedule::new(100.0, 0.1, 100_000),
            w1: 4.0,
            w2: 2.0,
            rollout_length: 5,
            num_workers: 5,
            attention: AttentionMode::Learnable,
            attention_objective: AttentionObjective::CompositeLoss,
            attention_init_scale: 1.0,
            hidden: [60, 200],
            rmsprop: RmsPropConfig::default(),
            policy_baseline: true,
            literal_max: false,
            grad_clip: None,
        }
    }
}

impl AgentConfig {
    pub fn oc() -> Self {
        Self {
            mode: Mode::Oc,
            ..Self::default()
        }
        .effective()
    }

    /// Applies mode constraints: OC forces identity attention and zero attention weights.
    pub fn effective(mut self) -> Self {
        if self.mode == Mode::Oc {
            self.attention = AttentionMode::Identity;
            self.w1 = 0.0;
            self.w2 = 0.0;
        }
        self
    }

    pub fn learns_attention(&self) -> bool {
        self.mode == Mode::Aoc && self.attention == AttentionMode::Learnable
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return config_err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.num_options == 0 {
            return config_err("num_options must be positive");
        }
        if self.rollout_length == 0 || self.num_workers == 0 {
            return config_err("rollout_length and num_workers must be positive");
        }
        for (name, s) in [("epsilon", &self.epsilon), ("entropy", &self.entropy)] {
            if s.start < 0.0 || s.end < 0.0 || !s.start.is_finite() || !s.end.is_finite() {
                return config_err(format!("{name} schedule must be non-negative"));
            }
        }
        if self.epsilon.start > 1.0 || self.epsilon.end > 1.0 {
            return config_err("epsilon must not exceed 1");
        }
        for (name, lr) in [
            ("lr", self.lr),
            ("lr_theta", self.lr_theta),
            ("lr_nu", self.lr_nu),
            ("lr_phi", self.lr_phi),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return config_err(format!("{name} must be a non-negative number"));
            }
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return config_err("w1 and w2 must be non-negative");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return config_err("grad_clip must be a positive number");
            }
        }
        if self.hidden.contains(&0) {
            return config_err("hidden layer sizes must be positive");
        }
        Ok(())
    }
}
