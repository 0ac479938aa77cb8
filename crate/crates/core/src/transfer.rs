//! Goal-transfer and blocked-hallway protocols: train, change the task, freeze the trunk
//! and keep training the heads (and attention).

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{rng_stream, Agent, FreezeMask, Mode, RunLog, Sink, Task, Tee, Trainer};
use crate::env::{GoalSpec, HallwayId};
use crate::error::{config_err, Error, Result};
use crate::network::Dense;

const STREAM_TRANSFER: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Move the goal to a new cell.
    Goal,
    /// Wall off one hallway that does not hold the goal.
    BlockedHallway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferVariant {
    #[serde(rename = "oc")]
    Oc,
    /// Attention loss weights kept.
    #[serde(rename = "aoc_i")]
    AocI,
    /// Attention loss weights set to zero after the switch.
    #[serde(rename = "aoc_ii")]
    AocII,
}

impl FromStr for TransferVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oc" => Ok(Self::Oc),
            "aoc_i" | "aoc-i" | "i" => Ok(Self::AocI),
            "aoc_ii" | "aoc-ii" | "ii" => Ok(Self::AocII),
            other => Err(Error::Config(format!("unknown transfer variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub kind: TransferKind,
    pub variant: TransferVariant,
    pub pre_train_episodes: u64,
    pub post_train_episodes: u64,
    /// Groups held fixed after the switch.
    #[serde(default = "FreezeMask::trunk")]
    pub frozen: FreezeMask,
    /// New goal for goal transfer; a random other cell when absent.
    #[serde(default)]
    pub goal: Option<GoalSpec>,
    /// Hallway to block; a random non-goal hallway when absent.
    #[serde(default)]
    pub block: Option<HallwayId>,
}

impl TransferSpec {
    pub fn new(kind: TransferKind, variant: TransferVariant, pre: u64, post: u64) -> Self {
        Self {
            kind,
            variant,
            pre_train_episodes: pre,
            post_train_episodes: post,
            frozen: FreezeMask::trunk(),
            goal: None,
            block: None,
        }
    }
}

/// The task after the switch.
pub fn transferred_task(before: &Task, spec: &TransferSpec, seed: u64) -> Result<Task> {
    let mut rng = rng_stream(seed, STREAM_TRANSFER);
    let mut task = before.clone();
    match spec.kind {
        TransferKind::Goal => {
            task.goal = match spec.goal {
                Some(g) => g.resolve(&task.layout, task.blocked, &mut rng)?,
                None => {
                    let choices: Vec<usize> = task
                        .layout
                        .open_states(task.blocked)
                        .into_iter()
                        .filter(|&s| s != before.goal)
                        .collect();
                    choices[rng.gen_range(0..choices.len())]
                }
            };
            if task.goal == before.goal {
                return config_err("goal transfer must move the goal");
            }
        }
        TransferKind::BlockedHallway => {
            if before.blocked.is_some() {
                return config_err("a hallway is already blocked");
            }
            let goal_hall = task.layout.hallway_at(task.goal);
            let id = match spec.block {
                Some(id) => id,
                None => {
                    let candidates: Vec<HallwayId> = task
                        .layout
                        .hallways()
                        .iter()
                        .map(|h| h.id)
                        .filter(|&id| Some(id) != goal_hall)
                        .collect();
                    *candidates
                        .choose(&mut rng)
                        .ok_or_else(|| Error::Config("no hallway can be blocked".into()))?
                }
            };
            if task.layout.hallway(id).is_none() {
                return config_err(format!("layout has no {} hallway", id.name()));
            }
            if Some(id) == goal_hall {
                return config_err("cannot block the hallway holding the goal");
            }
            task.blocked = Some(id);
        }
    }
    Ok(task)
}

/// Prepares a trained agent for the post-switch phase: variant check, frozen groups,
/// loss weights and schedules pinned at their end values.
pub fn prepare_agent(mut agent: Agent, spec: &TransferSpec) -> Result<Agent> {
    match (spec.variant, agent.config.mode) {
        (TransferVariant::Oc, Mode::Oc) | (TransferVariant::AocI | TransferVariant::AocII, Mode::Aoc) => {}
        (v, m) => return config_err(format!("variant {v:?} does not apply to a {m:?} agent")),
    }
    if spec.variant == TransferVariant::AocII {
        agent.config.w1 = 0.0;
        agent.config.w2 = 0.0;
    }
    agent.frozen = spec.frozen.clone();
    agent.finish_schedules();
    Ok(agent)
}

/// Builds the post-switch trainer from a trained agent.
pub fn apply_transfer(agent: Agent, before: &Task, spec: &TransferSpec, seed: u64) -> Result<Trainer> {
    let task = transferred_task(before, spec, seed)?;
    let agent = prepare_agent(agent, spec)?;
    Trainer::with_phase(agent, task, seed, 1)
}

/// Parameter groups frozen during the switch, copied for later comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSnapshot(Vec<Dense>);

impl FrozenSnapshot {
    pub fn take(agent: &Agent) -> Self {
        Self(
            agent
                .params
                .layers
                .iter()
                .enumerate()
                .filter(|(i, _)| agent.frozen.contains(crate::network::ParamGroup::of_layer(*i)))
                .map(|(_, l)| l.clone())
                .collect(),
        )
    }

    /// Bitwise comparison, so `-0.0` and `0.0` or differing NaN payloads count as changes.
    pub fn unchanged(&self, agent: &Agent) -> bool {
        let now = Self::take(agent);
        now.0.len() == self.0.len()
            && now.0.iter().zip(&self.0).all(|(a, b)| {
                a.weight.len() == b.weight.len()
                    && a.weight.iter().zip(&b.weight).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias.iter().zip(&b.bias).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

pub struct TransferOutcome {
    pub trainer: Trainer,
    /// Both phases; `transfer_boundary` marks the first post-switch episode.
    pub log: RunLog,
    pub before: Task,
    pub frozen_unchanged: bool,
}

/// Continues `trainer` through the switch and the post-switch phase.
pub fn continue_with_transfer(
    trainer: Trainer,
    mut log: RunLog,
    spec: &TransferSpec,
    sink: &mut dyn Sink,
) -> Result<TransferOutcome> {
    let before = trainer.task().clone();
    let seed = trainer.seed();
    let episodes = trainer.episodes();
    let mut next = apply_transfer(trainer.agent, &before, spec, seed)?;
    next.set_episodes(episodes);
    let snapshot = FrozenSnapshot::take(&next.agent);
    log.transfer_boundary = Some(log.episodes.len() as u64);
    next.run_episodes(
        spec.post_train_episodes,
        &mut Tee {
            log: &mut log,
            inner: sink,
        },
    )?;
    let frozen_unchanged = snapshot.unchanged(&next.agent);
    Ok(TransferOutcome {
        trainer: next,
        log,
        before,
        frozen_unchanged,
    })
}

/// Trains from scratch for `spec.pre_train_episodes`, then switches.
pub fn run_transfer(
    config: crate::agent::AgentConfig,
    task: Task,
    seed: u64,
    spec: &TransferSpec,
    sink: &mut dyn Sink,
) -> Result<TransferOutcome> {
    let agent = Agent::new(config, &task.layout, seed)?;
    let mut trainer = Trainer::new(agent, task, seed)?;
    let mut log = RunLog::default();
    trainer.run_episodes(
        spec.pre_train_episodes,
        &mut Tee {
            log: &mut log,
            inner: sink,
        },
    )?;
    continue_with_transfer(trainer, log, spec, sink)
}

/// Episodes after `start` until the trailing `window`-episode mean length first drops
/// below `threshold`; `None` if it never does.
pub fn episodes_to_recover(lengths: &[f64], start: usize, window: usize, threshold: f64) -> Option<usize> {
    let tail = &lengths[start.min(lengths.len())..];
    let mut sum = 0.0;
    for (i, &l) in tail.iter().enumerate() {
        sum += l;
        if i >= window {
            sum -= tail[i - window];
        }
        if i + 1 >= window && sum / (window as f64) < threshold {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, NullSink};
    use crate::env::{EnvConfig, GridLayout};
    use std::sync::Arc;

    fn task(goal: GoalSpec) -> Task {
        Task::resolve(Arc::new(GridLayout::four_rooms()), EnvConfig::default(), goal, None, 5).unwrap()
    }

    #[test]
    fn blocked_hallway_never_holds_goal() {
        let before = task(GoalSpec::Hallway(HallwayId::North));
        let spec = TransferSpec::new(TransferKind::BlockedHallway, TransferVariant::AocI, 0, 0);
        for seed in 0..50 {
            let after = transferred_task(&before, &spec, seed).unwrap();
            assert_ne!(after.blocked, Some(HallwayId::North));
            assert!(after.blocked.is_some());
            assert_eq!(after.goal, before.goal);
        }
        let bad = TransferSpec {
            block: Some(HallwayId::North),
            ..spec
        };
        assert!(transferred_task(&before, &bad, 0).is_err());
    }

    #[test]
    fn goal_transfer_moves_goal() {
        let before = task(GoalSpec::Hallway(HallwayId::North));
        let mut spec = TransferSpec::new(TransferKind::Goal, TransferVariant::AocII, 0, 0);
        for seed in 0..50 {
            assert_ne!(transferred_task(&before, &spec, seed).unwrap().goal, before.goal);
        }
        spec.goal = Some(GoalSpec::Cell(crate::env::Cell::new(1, 1)));
        let after = transferred_task(&before, &spec, 0).unwrap();
        assert_eq!(after.goal, 0);
    }

    #[test]
    fn variant_must_match_mode() {
        let t = task(GoalSpec::Random);
        let oc = Agent::new(AgentConfig::oc(), &t.layout, 0).unwrap();
        let spec = TransferSpec::new(TransferKind::Goal, TransferVariant::AocI, 0, 0);
        assert!(prepare_agent(oc, &spec).is_err());
        let aoc = Agent::new(AgentConfig::default(), &t.layout, 0).unwrap();
        let spec = TransferSpec::new(TransferKind::Goal, TransferVariant::AocII, 0, 0);
        let a = prepare_agent(aoc, &spec).unwrap();
        assert_eq!((a.config.w1, a.config.w2), (0.0, 0.0));
        assert!(a.config.learns_attention());
        assert_eq!(a.epsilon(), a.config.epsilon.end);
    }

    #[test]
    fn frozen_trunk_is_bitwise_stable() {
        let t = task(GoalSpec::Random);
        let spec = TransferSpec::new(TransferKind::Goal, TransferVariant::AocI, 3, 3);
        let out = run_transfer(AgentConfig::default(), t, 1, &spec, &mut NullSink).unwrap();
        assert!(out.frozen_unchanged);
        let boundary = out.log.transfer_boundary.unwrap() as usize;
        assert!(boundary >= 3 && out.log.episodes.len() - boundary >= 3);
        assert!(out.trainer.agent.updates > 0);
    }

    #[test]
    fn recovery_window() {
        let l = [100.0, 50.0, 20.0, 10.0, 10.0];
        assert_eq!(episodes_to_recover(&l, 0, 2, 30.0), Some(4));
        assert_eq!(episodes_to_recover(&l, 0, 1, 5.0), None);
        assert_eq!(episodes_to_recover(&l, 2, 2, 30.0), Some(2));
    }
}
