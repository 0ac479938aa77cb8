//! Diagnostics over option usage and attention: dominance, attentive coverage, overlap,
//! usage/attention consistency and cross-run usage spread.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act, rng_stream, select_option, Agent, TapeCache, Task, STREAM_EVAL};
use crate::attention::AttentionBank;
use crate::env::{Action, FourRooms};
use crate::error::{usage_err, Result};

/// Option-execution counts per state, `states x options`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageMap {
    pub num_states: usize,
    pub num_options: usize,
    pub counts: Vec<u64>,
    pub episodes: u64,
}

impl UsageMap {
    pub fn new(num_states: usize, num_options: usize) -> Self {
        Self {
            num_states,
            num_options,
            counts: vec![0; num_states * num_options],
            episodes: 0,
        }
    }

    pub fn record(&mut self, state: usize, option: usize) {
        self.counts[state * self.num_options + option] += 1;
    }

    pub fn count(&self, state: usize, option: usize) -> u64 {
        self.counts[state * self.num_options + option]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of execution steps per option; zeros when nothing was recorded.
    pub fn option_fractions(&self) -> Vec<f64> {
        let mut per = vec![0u64; self.num_options];
        for row in self.counts.chunks(self.num_options) {
            for (p, c) in per.iter_mut().zip(row) {
                *p += c;
            }
        }
        let total = self.total();
        per.iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    pub fn dominant_usage(&self) -> f64 {
        self.option_fractions().into_iter().fold(0.0, f64::max)
    }
}

/// Fraction of steps taken by the most used option.
pub fn dominant_usage(fractions: &[f64]) -> f64 {
    fractions.iter().copied().fold(0.0, f64::max)
}

/// Attention values at a point in training, `options x states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub num_options: usize,
    pub num_states: usize,
    pub values: Vec<f64>,
    /// Environment frames at capture time.
    pub frames: u64,
}

impl AttentionSnapshot {
    pub fn of(bank: &AttentionBank, frames: u64) -> Self {
        Self {
            num_options: bank.num_options(),
            num_states: bank.dim(),
            values: bank.values().to_vec(),
            frames,
        }
    }

    pub fn value(&self, option: usize, state: usize) -> f64 {
        self.values[option * self.num_states + state]
    }

    /// Mean absolute difference to another snapshot of the same shape.
    pub fn mean_abs_change(&self, other: &Self) -> f64 {
        let n = self.values.len().max(1) as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub usage: UsageMap,
    pub mean_return: f64,
    pub mean_length: f64,
    pub dominant_usage: f64,
    pub option_fractions: Vec<f64>,
}

/// Runs `episodes` episodes without learning. Options are chosen epsilon-greedily with
/// `epsilon`; terminations and actions are sampled as in training.
pub fn evaluate(agent: &Agent, task: &Task, episodes: u64, epsilon: f64, seed: u64) -> Result<Evaluation> {
    if episodes == 0 {
        return usage_err("evaluation needs at least one episode");
    }
    let mut rng = rng_stream(seed, STREAM_EVAL);
    let env_rng = rng_stream(seed, STREAM_EVAL + 1);
    let mut env = FourRooms::new(task.layout.clone(), task.env, task.goal, task.blocked, env_rng)?;
    let mut cache = TapeCache::new();
    let mut usage = UsageMap::new(task.layout.num_states(), agent.config.num_options);
    let (mut ret_sum, mut len_sum) = (0.0, 0u64);
    for _ in 0..episodes {
        env.reset();
        let mut option: Option<usize> = None;
        loop {
            let state = env.agent();
            let heads = agent.heads_at(&mut cache, state)?;
            let values = Agent::option_values(&heads);
            let o = match option {
                Some(prev) if rng.gen::<f64>() >= heads[prev].beta => prev,
                _ => select_option(&values, epsilon, &mut rng),
            };
            usage.record(state, o);
            let a = act(&heads[o].pi, &mut rng);
            let step = env.step(Action::ALL[a])?;
            ret_sum += step.reward;
            len_sum += 1;
            if step.done || step.truncated {
                break;
            }
            option = Some(o);
        }
        usage.episodes += 1;
    }
    let fractions = usage.option_fractions();
    Ok(Evaluation {
        dominant_usage: dominant_usage(&fractions),
        option_fractions: fractions,
        mean_return: ret_sum / episodes as f64,
        mean_length: len_sum as f64 / episodes as f64,
        usage,
    })
}

/// Per-state argmax of attention over options (ties to the lowest id), as percentages of
/// states won by each option.
pub fn coverage_per_option(snapshot: &AttentionSnapshot) -> Vec<f64> {
    let mut wins = vec![0usize; snapshot.num_options];
    for s in 0..snapshot.num_states {
        let mut best = 0;
        for o in 1..snapshot.num_options {
            if snapshot.value(o, s) > snapshot.value(best, s) {
                best = o;
            }
        }
        wins[best] += 1;
    }
    wins.iter()
        .map(|&w| 100.0 * w as f64 / snapshot.num_states.max(1) as f64)
        .collect()
}

/// `(least, most)` attentive-option coverage in percent.
pub fn attentive_coverage(snapshot: &AttentionSnapshot) -> (f64, f64) {
    let per = coverage_per_option(snapshot);
    let least = per.iter().copied().fold(f64::INFINITY, f64::min);
    let most = per.iter().copied().fold(0.0, f64::max);
    (least, most)
}

/// Thresholds for [`attention_overlap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapThresholds {
    /// Minimum gap between the largest and second largest attention.
    pub gap: f64,
    /// Second largest attention must stay below this.
    pub second: f64,
}

impl Default for OverlapThresholds {
    fn default() -> Self {
        Self { gap: 0.3, second: 0.05 }
    }
}

/// Percentage of states where a single option clearly owns the attention.
pub fn attention_overlap(snapshot: &AttentionSnapshot, t: OverlapThresholds) -> f64 {
    let mut clear = 0usize;
    for s in 0..snapshot.num_states {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for o in 0..snapshot.num_options {
            let v = snapshot.value(o, s);
            if v > first {
                second = first;
                first = v;
            } else if v > second {
                second = v;
            }
        }
        if first - second > t.gap && second < t.second {
            clear += 1;
        }
    }
    100.0 * clear as f64 / snapshot.num_states.max(1) as f64
}

/// Attention below this counts as "not attending".
pub const LOW_ATTENTION: f64 = 0.01;

/// Probability that the executing option's attention at the visited state is below
/// [`LOW_ATTENTION`]. `None` when no steps were recorded.
pub fn usage_attention_consistency(usage: &UsageMap, snapshot: &AttentionSnapshot) -> Option<f64> {
    let total = usage.total();
    if total == 0 {
        return None;
    }
    let mut low = 0u64;
    for s in 0..usage.num_states {
        for o in 0..usage.num_options {
            if snapshot.value(o, s) < LOW_ATTENTION {
                low += usage.count(s, o);
            }
        }
    }
    Some(low as f64 / total as f64)
}

/// Sample standard deviation (n - 1) of each option's usage fraction across runs.
pub fn usage_variance(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if runs.len() < 2 {
        return usage_err("usage spread needs at least two runs");
    }
    let k = runs[0].len();
    if runs.iter().any(|r| r.len() != k) {
        return usage_err("runs disagree on the option count");
    }
    let n = runs.len() as f64;
    Ok((0..k)
        .map(|o| {
            let mean = runs.iter().map(|r| r[o]).sum::<f64>() / n;
            let ss: f64 = runs.iter().map(|r| (r[o] - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect())
}
