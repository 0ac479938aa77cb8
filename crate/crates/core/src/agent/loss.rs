//! The composite surrogate loss of one synchronized update and its exact gradient.
//!
//! Network parameters minimize, per transition and averaged over the batch,
//!
//! * `½ (Q_Ω(o_ω, ω) - G)²` (options evaluation),
//! * `-log π_ω(a | o_ω) · signal - c · H(π_ω(· | o_ω))` (intra-option policy),
//! * `β_ω(o'_ω) · A` at non-terminal next states (termination),
//!
//! where `G`, `signal` and `A` are constants. Attention values minimize `w1 · L1 + w2 · L2`
//! plus, depending on [`AttentionObjective`], the network terms above (through the masks)
//! and/or `-mean Q_Ω(o_ω, ω)` with the network held fixed.

use std::collections::BTreeMap;

use crate::attention::AttentionBank;
use crate::error::{usage_err, Result};
use crate::network::{GradBuffer, HeadGrads, NetworkParams};

use super::config::AttentionObjective;
use super::trainer::TapeCache;

/// One transition with its detached learning signals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionInput {
    pub state: usize,
    pub option: usize,
    pub action: usize,
    /// `None` when the next state is terminal.
    pub next_state: Option<usize>,
    /// Regression target for `Q_Ω(o_ω, ω)`.
    pub target: f64,
    /// Critic signal weighting `∇ log π`.
    pub signal: f64,
    /// `Q_Ω(o'_ω, ω) - V_Ω(o')`; ignored for terminal next states.
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossInputs {
    pub transitions: Vec<TransitionInput>,
    /// Visited-state sequences for the temporal regularizer, one per rollout segment.
    pub segments: Vec<Vec<usize>>,
    pub entropy_coef: f64,
    pub w1: f64,
    pub w2: f64,
    /// Temporal-regularization sums are divided by this (the worker count).
    pub num_workers: usize,
    pub learn_attention: bool,
    pub attention_objective: AttentionObjective,
}

/// Batch-averaged loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub value: f64,
    pub policy: f64,
    /// `-c · mean H`.
    pub entropy: f64,
    pub termination: f64,
    /// `-mean Q_Ω(o_ω, ω)` as seen by the attention.
    pub attention_value: f64,
    /// Unweighted `L1`.
    pub diversity: f64,
    /// Unweighted `L2`, already divided by the worker count.
    pub temporal: f64,
}

impl LossTerms {
    pub fn network_total(&self) -> f64 {
        self.value + self.policy + self.entropy + self.termination
    }

    pub fn attention_total(&self, w1: f64, w2: f64) -> f64 {
        self.attention_value + w1 * self.diversity + w2 * self.temporal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub network: GradBuffer,
    /// `dL/dh`, `num_options x dim`.
    pub attention: Vec<f64>,
}

impl Grads {
    pub fn zeros(params: &NetworkParams, bank: &AttentionBank) -> Self {
        Self {
            network: GradBuffer::zeros(&params.shape),
            attention: vec![0.0; bank.values().len()],
        }
    }

    pub fn clear(&mut self) {
        self.network.clear();
        self.attention.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Accumulates the gradient of the composite loss into `grads` and returns its terms.
pub fn improvement_grads(
    params: &NetworkParams,
    bank: &AttentionBank,
    inputs: &LossInputs,
    cache: &mut TapeCache,
    grads: &mut Grads,
) -> Result<LossTerms> {
    let n = inputs.transitions.len();
    if n == 0 {
        return usage_err("empty batch");
    }
    if grads.attention.len() != bank.values().len() {
        return usage_err("attention gradient buffer has the wrong shape");
    }
    let scale = 1.0 / n as f64;
    let num_actions = params.shape.num_actions;
    let mut terms = LossTerms::default();
    let through_loss = inputs.learn_attention && inputs.attention_objective.uses_loss();
    let ascent = inputs.learn_attention && inputs.attention_objective.uses_value();
    // Head gradients per cached trunk pass, so each pass is back-propagated once. When the
    // loss also trains attention, passes are split per option so credit stays separable.
    let mut net_heads: BTreeMap<(usize, u64, usize), HeadGrads> = BTreeMap::new();
    let owner = |o: usize| if through_loss { o } else { usize::MAX };
    // Attention credit must stay per option even when two options share a trunk pass.
    let mut att_heads: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    for tr in &inputs.transitions {
        if tr.option >= params.shape.num_options || tr.action >= num_actions {
            return usage_err("transition option or action out of range");
        }
        let (state, bits) = cache.key(bank, tr.state, tr.option);
        let key = (state, bits, owner(tr.option));
        let heads = params.option_heads(cache.tape(params, bank, tr.state, tr.option)?, tr.option);
        let q = heads.q[tr.option];

        let err = q - tr.target;
        terms.value += 0.5 * err * err * scale;
        let hg = net_heads
            .entry(key)
            .or_insert_with(|| HeadGrads::zeros(&params.shape));
        hg.q[tr.option] += err * scale;

        let mut d_log_pi = vec![0.0; num_actions];
        terms.policy -= heads.log_pi[tr.action] * tr.signal * scale;
        d_log_pi[tr.action] -= tr.signal * scale;
        let c = inputs.entropy_coef;
        let mut entropy = 0.0;
        for (j, (&p, &lp)) in heads.pi.iter().zip(&heads.log_pi).enumerate() {
            entropy -= p * lp;
            d_log_pi[j] += c * p * (lp + 1.0) * scale;
        }
        terms.entropy -= c * entropy * scale;
        hg.add_log_pi(tr.option, &heads.pi, &d_log_pi);

        if let Some(next) = tr.next_state {
            let (state, bits) = cache.key(bank, next, tr.option);
            let key = (state, bits, owner(tr.option));
            let tape = cache.tape(params, bank, next, tr.option)?;
            let beta = params.termination_prob(tape, tr.option);
            terms.termination += beta * tr.advantage * scale;
            net_heads
                .entry(key)
                .or_insert_with(|| HeadGrads::zeros(&params.shape))
                .add_beta(tr.option, beta, tr.advantage * scale);
        }

        if ascent {
            terms.attention_value -= q * scale;
            *att_heads.entry((tr.state, tr.option)).or_insert(0.0) -= scale;
        }
    }

    let dim = bank.dim();
    for (&(state, bits, option), hg) in &net_heads {
        let tape = cache.tape_by_key(params, bank, state, bits)?;
        let d_x = params.backward(tape, hg, Some(&mut grads.network), through_loss)?;
        if let Some(d_x) = d_x {
            grads.attention[option * dim + state] += d_x[state];
        }
    }

    if inputs.learn_attention {
        for (&(state, option), &dq) in &att_heads {
            let mut hg = HeadGrads::zeros(&params.shape);
            hg.q[option] = dq;
            let tape = cache.tape(params, bank, state, option)?;
            let d_x = params.backward(tape, &hg, None, true)?.expect("input gradient requested");
            // o = h ⊙ s with one-hot s: dL/dh[state] = dL/do[state].
            grads.attention[option * dim + state] += d_x[state];
        }
        if inputs.w1 != 0.0 {
            let (l1, g1) = bank.cosine_diversity_loss();
            terms.diversity = l1;
            grads.attention.iter_mut().zip(&g1).for_each(|(g, d)| *g += inputs.w1 * d);
        }
        if inputs.w2 != 0.0 {
            let per_worker = 1.0 / inputs.num_workers.max(1) as f64;
            for seg in &inputs.segments {
                let (l2, g2) = bank.temporal_reg_loss(seg);
                terms.temporal += l2 * per_worker;
                grads
                    .attention
                    .iter_mut()
                    .zip(&g2)
                    .for_each(|(g, d)| *g += inputs.w2 * per_worker * d);
            }
        }
    }

    let all = [
        terms.value,
        terms.policy,
        terms.entropy,
        terms.termination,
        terms.attention_value,
        terms.diversity,
        terms.temporal,
    ];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::Training(format!("non-finite loss: {terms:?}")));
    }
    Ok(terms)
}
