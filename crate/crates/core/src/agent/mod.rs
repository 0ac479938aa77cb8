//! Attention option-critic training, with plain option-critic as a configuration of the
//! same loop (identity attention, no attention losses).

mod config;
mod loss;
mod trainer;

pub use config::{AgentConfig, AttentionMode, AttentionObjective, LinearSchedule, Mode};
pub use loss::{improvement_grads, Grads, LossInputs, LossTerms, TransitionInput};
pub use trainer::{
    rng_stream, train, Agent, EpisodeRecord, FreezeMask, NullSink, RunLog, Sink, TapeCache, Task,
    Tee, TrainOutcome, Trainer,
};
pub(crate) use trainer::STREAM_EVAL;


use rand::Rng;

use crate::network::OptionHeads;

/// Epsilon-greedy choice over `values[ω] = Q_Ω(o_ω, ω)`. Ties go to the lowest option id.
pub fn select_option<R: Rng>(values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    // Always draw the coin so the stream advances identically whatever the outcome.
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        rng.gen_range(0..values.len())
    } else {
        argmax(values)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples an action index from a probability row.
pub fn act<R: Rng>(pi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // Rounding left the cumulative sum just under 1: fall back to the last positive entry.
    pi.iter().rposition(|&p| p > 0.0).unwrap_or(pi.len() - 1)
}

/// Quantities at the next state that the bootstrapped target needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    /// `Q_Ω(o'_ω, ω)` for the executing option.
    pub q_continue: f64,
    /// `β_ω(o'_ω)`.
    pub beta: f64,
    /// `max_ω̄ Q_Ω` at the next state.
    pub q_max: f64,
}

impl Arrival {
    /// From per-option heads at the next state, each evaluated on its own masked
    /// observation. With `literal` the max ranges over the executing option's row
    /// `Q_Ω(o'_ω, ·)` instead.
    pub fn from_heads(heads: &[OptionHeads], option: usize, literal: bool) -> Self {
        let own = &heads[option];
        let q_max = if literal {
            own.q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            heads
                .iter()
                .enumerate()
                .map(|(o, h)| h.q[o])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        Self {
            q_continue: own.q[option],
            beta: own.beta,
            q_max,
        }
    }

    /// Value on arrival: `(1-β) Q_Ω(o'_ω, ω) + β max Q_Ω`.
    pub fn value(&self) -> f64 {
        (1.0 - self.beta) * self.q_continue + self.beta * self.q_max
    }
}

/// One-step options-evaluation target; `next` is `None` when the next state is terminal.
pub fn td_target(reward: f64, next: Option<Arrival>, gamma: f64) -> f64 {
    match next {
        None => reward,
        Some(a) => reward + gamma * a.value(),
    }
}

/// Value of the epsilon-soft policy over options: `(1-ε) max Q + ε mean Q`.
pub fn soft_value(values: &[f64], epsilon: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (1.0 - epsilon) * max + epsilon * mean
}
