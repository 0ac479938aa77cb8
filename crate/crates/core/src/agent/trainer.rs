use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionBank;
use crate::env::{Action, EnvConfig, FourRooms, GridLayout, HallwayId};
use crate::error::{config_err, Result};
use crate::network::{NetShape, NetworkOptimizer, NetworkParams, OptionHeads, ParamGroup, Tape};

use super::config::{AgentConfig, AttentionMode};
use super::loss::{improvement_grads, Grads, LossInputs, LossTerms, TransitionInput};
use super::{act, select_option, soft_value, td_target, Arrival};

/// Dedicated generator stream `stream` of the master `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_GOAL: u64 = 1;
pub(crate) const STREAM_EVAL: u64 = 2;
const STREAM_WORKER_ENV: u64 = 1 << 10;
const STREAM_WORKER_POLICY: u64 = 1 << 11;
const STREAMS_PER_PHASE: u64 = 1 << 12;

/// Trunk passes keyed by `(state, attention value bits)`.
///
/// Entries are valid for one parameter instance and version; the cache clears itself
/// when the version changes. Options whose masked observations coincide share a pass.
#[derive(Debug, Default)]
pub struct TapeCache {
    tapes: BTreeMap<(usize, u64), Tape>,
    version: Option<u64>,
}

impl TapeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.tapes.clear();
        self.version = None;
    }

    pub fn len(&self) -> usize {
        self.tapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapes.is_empty()
    }

    pub fn key(&self, bank: &AttentionBank, state: usize, option: usize) -> (usize, u64) {
        (state, bank.value(option, state).to_bits())
    }

    pub fn tape(
        &mut self,
        params: &NetworkParams,
        bank: &AttentionBank,
        state: usize,
        option: usize,
    ) -> Result<&Tape> {
        let bits = bank.value(option, state).to_bits();
        self.tape_by_key(params, bank, state, bits)
    }

    pub(crate) fn tape_by_key(
        &mut self,
        params: &NetworkParams,
        bank: &AttentionBank,
        state: usize,
        bits: u64,
    ) -> Result<&Tape> {
        if self.version != Some(params.version) {
            self.tapes.clear();
            self.version = Some(params.version);
        }
        if !self.tapes.contains_key(&(state, bits)) {
            let mut input = vec![0.0; bank.dim()];
            input[state] = f64::from_bits(bits);
            let tape = params.trunk(&input)?;
            self.tapes.insert((state, bits), tape);
        }
        Ok(&self.tapes[&(state, bits)])
    }
}

/// Parameter groups excluded from updates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask(pub BTreeSet<ParamGroup>);

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Builds a mask from group names (`trunk`, `q_head`, `policy_head`,
    /// `termination_head`, `attention`, or `all`).
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for name in names {
            let name = name.as_ref();
            if name == "all" {
                set.extend(ParamGroup::ALL);
                continue;
            }
            match ParamGroup::parse(name) {
                Some(g) => {
                    set.insert(g);
                }
                None => return config_err(format!("unknown parameter group `{name}`")),
            }
        }
        Ok(Self(set))
    }

    pub fn trunk() -> Self {
        Self(BTreeSet::from([ParamGroup::Trunk]))
    }

    pub fn contains(&self, g: ParamGroup) -> bool {
        self.0.contains(&g)
    }
}

/// Learnable state: network, attention bank, optimizer state and clocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub params: NetworkParams,
    pub optimizer: NetworkOptimizer,
    pub bank: AttentionBank,
    pub frozen: FreezeMask,
    /// Environment frames seen, summed over workers.
    pub frames: u64,
    /// Per-worker step count driving the exploration and entropy schedules: all workers
    /// advance it together by one rollout per update.
    pub schedule_clock: u64,
    pub updates: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, layout: &GridLayout, seed: u64) -> Result<Self> {
        let config = config.effective();
        config.validate()?;
        let mut rng = rng_stream(seed, STREAM_INIT);
        let mut shape = NetShape::new(layout.num_states(), config.num_options, Action::COUNT);
        shape.hidden = config.hidden;
        let params = NetworkParams::init(shape, &mut rng);
        let dim = layout.num_states();
        let bank = match config.attention {
            AttentionMode::Learnable => {
                AttentionBank::random(config.num_options, dim, config.attention_init_scale, &mut rng)
            }
            AttentionMode::Identity => AttentionBank::identity(config.num_options, dim),
            AttentionMode::Rooms => AttentionBank::round_robin_rooms(layout, config.num_options)?,
        };
        let optimizer = NetworkOptimizer::new(&params, config.rmsprop);
        Ok(Self {
            config,
            params,
            optimizer,
            bank,
            frozen: FreezeMask::none(),
            frames: 0,
            schedule_clock: 0,
            updates: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.value(self.schedule_clock)
    }

    pub fn entropy_coef(&self) -> f64 {
        self.config.entropy.value(self.schedule_clock)
    }

    /// Pins both schedules at their end values.
    pub fn finish_schedules(&mut self) {
        self.schedule_clock = self
            .schedule_clock
            .max(self.config.epsilon.steps)
            .max(self.config.entropy.steps);
    }

    /// Heads of every option, each evaluated on its own masked observation of `state`.
    pub fn heads_at(&self, cache: &mut TapeCache, state: usize) -> Result<Vec<OptionHeads>> {
        (0..self.config.num_options)
            .map(|o| {
                let tape = cache.tape(&self.params, &self.bank, state, o)?;
                Ok(self.params.option_heads(tape, o))
            })
            .collect()
    }

    /// `Q_Ω(o_ω, ω)` for every option.
    pub fn option_values(heads: &[OptionHeads]) -> Vec<f64> {
        heads.iter().enumerate().map(|(o, h)| h.q[o]).collect()
    }

    /// One RMSprop step on every trainable group.
    /// Rescales the network gradient to at most `grad_clip` in L2 norm, then steps.
    pub fn apply(&mut self, grads: &mut Grads) -> Result<()> {
        if let Some(clip) = self.config.grad_clip {
            let norm = grads.network.norm();
            if norm > clip {
                grads.network.scale(clip / norm);
            }
        }
        let (config, frozen) = (&self.config, &self.frozen);
        let lr_of = |g: ParamGroup| group_lr(config, frozen, g);
        self.optimizer.step(&mut self.params, &grads.network, lr_of)?;
        if self.config.learns_attention() {
            if let Some(lr) = group_lr(&self.config, &self.frozen, ParamGroup::Attention) {
                self.bank.apply_grads(&grads.attention, lr, self.config.rmsprop)?;
            }
        }
        if !self.params.is_finite() {
            return Err(crate::Error::Training(format!(
                "parameters became non-finite at update {}",
                self.updates
            )));
        }
        self.updates += 1;
        Ok(())
    }
}

fn group_lr(config: &AgentConfig, frozen: &FreezeMask, g: ParamGroup) -> Option<f64> {
    if frozen.contains(g) {
        return None;
    }
    Some(match g {
        ParamGroup::Trunk | ParamGroup::QHead => config.lr,
        ParamGroup::PolicyHead => config.lr_theta,
        ParamGroup::TerminationHead => config.lr_nu,
        ParamGroup::Attention => config.lr_phi,
    })
}

/// The world a run trains in.
#[derive(Debug, Clone)]
pub struct Task {
    pub layout: Arc<GridLayout>,
    pub env: EnvConfig,
    pub goal: usize,
    pub blocked: Option<HallwayId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Episode index within the run, counted over all workers in completion order.
    pub episode: u64,
    pub worker: usize,
    pub ret: f64,
    pub length: usize,
    pub reached_goal: bool,
    /// Steps executed under each option.
    pub option_steps: Vec<u64>,
    /// Total frames when the episode ended.
    pub frames: u64,
}

impl EpisodeRecord {
    pub fn usage_fractions(&self) -> Vec<f64> {
        let total: u64 = self.option_steps.iter().sum();
        self.option_steps
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }
}

/// Receives progress from a training run.
pub trait Sink {
    fn episode(&mut self, _record: &EpisodeRecord) -> Result<()> {
        Ok(())
    }

    /// Called when the frame count crosses a checkpoint boundary.
    fn checkpoint(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl Sink for NullSink {}

/// In-memory record of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub episodes: Vec<EpisodeRecord>,
    /// Episode count at which a transfer started, if any.
    pub transfer_boundary: Option<u64>,
}

impl RunLog {
    pub fn lengths(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.length as f64).collect()
    }

    /// Mean episode length over the last `n` episodes.
    pub fn final_mean_length(&self, n: usize) -> f64 {
        let l = self.lengths();
        let tail = &l[l.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// Sum of episode lengths over the first `n` episodes.
    pub fn length_auc(&self, n: usize) -> f64 {
        self.episodes.iter().take(n).map(|e| e.length as f64).sum()
    }
}

impl Sink for RunLog {
    fn episode(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.episodes.push(record.clone());
        Ok(())
    }
}

/// Records episodes into a [`RunLog`] and forwards everything to another sink.
pub struct Tee<'a> {
    pub log: &'a mut RunLog,
    pub inner: &'a mut dyn Sink,
}

impl Sink for Tee<'_> {
    fn episode(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.log.episode(record)?;
        self.inner.episode(record)
    }

    fn checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        self.inner.checkpoint(trainer)
    }
}

#[derive(Debug, Clone)]
struct Worker {
    env: FourRooms,
    rng: ChaCha8Rng,
    option: Option<usize>,
    ret: f64,
    length: usize,
    option_steps: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Step {
    state: usize,
    option: usize,
    action: usize,
    reward: f64,
    next: usize,
    done: bool,
    truncated: bool,
}

/// Synchronized multi-worker training loop.
pub struct Trainer {
    pub agent: Agent,
    task: Task,
    seed: u64,
    workers: Vec<Worker>,
    cache: TapeCache,
    grads: Grads,
    episodes: u64,
    checkpoint_every: u64,
    next_checkpoint: u64,
    last_terms: LossTerms,
}

impl Trainer {
    pub fn new(agent: Agent, task: Task, seed: u64) -> Result<Self> {
        Self::with_phase(agent, task, seed, 0)
    }

    /// `phase` selects fresh generator streams, so a resumed or transferred run does not
    /// replay the environment randomness of an earlier phase.
    pub fn with_phase(agent: Agent, task: Task, seed: u64, phase: u64) -> Result<Self> {
        if agent.params.shape.input_dim != task.layout.num_states() {
            return config_err(format!(
                "network expects {} states, layout has {}",
                agent.params.shape.input_dim,
                task.layout.num_states()
            ));
        }
        let base = phase * STREAMS_PER_PHASE;
        let workers = (0..agent.config.num_workers as u64)
            .map(|k| {
                let env = FourRooms::new(
                    task.layout.clone(),
                    task.env,
                    task.goal,
                    task.blocked,
                    rng_stream(seed, base + STREAM_WORKER_ENV + k),
                )?;
                Ok(Worker {
                    env,
                    rng: rng_stream(seed, base + STREAM_WORKER_POLICY + k),
                    option: None,
                    ret: 0.0,
                    length: 0,
                    option_steps: vec![0; agent.config.num_options],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let grads = Grads::zeros(&agent.params, &agent.bank);
        Ok(Self {
            agent,
            task,
            seed,
            workers,
            cache: TapeCache::new(),
            grads,
            episodes: 0,
            checkpoint_every: u64::MAX,
            next_checkpoint: u64::MAX,
            last_terms: LossTerms::default(),
        })
    }

    /// Calls [`Sink::checkpoint`] every `frames` environment frames.
    pub fn set_checkpoint_every(&mut self, frames: u64) {
        self.checkpoint_every = frames.max(1);
        self.next_checkpoint = (self.agent.frames / self.checkpoint_every + 1) * self.checkpoint_every;
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Continues episode numbering from an earlier phase.
    pub fn set_episodes(&mut self, episodes: u64) {
        self.episodes = episodes;
    }

    pub fn last_loss(&self) -> LossTerms {
        self.last_terms
    }

    /// Collects one rollout per worker and applies one update.
    pub fn step(&mut self, sink: &mut dyn Sink) -> Result<LossTerms> {
        let cfg = self.agent.config.clone();
        let mut inputs = LossInputs {
            entropy_coef: self.agent.entropy_coef(),
            w1: cfg.w1,
            w2: cfg.w2,
            num_workers: cfg.num_workers,
            learn_attention: cfg.learns_attention(),
            attention_objective: cfg.attention_objective,
            ..LossInputs::default()
        };

        for w in 0..self.workers.len() {
            let mut steps = Vec::with_capacity(cfg.rollout_length);
            let mut segment = vec![self.workers[w].env.agent()];
            for _ in 0..cfg.rollout_length {
                let state = self.workers[w].env.agent();
                let heads = self.agent.heads_at(&mut self.cache, state)?;
                let epsilon = self.agent.epsilon();
                let worker = &mut self.workers[w];
                let option = match worker.option {
                    None => select_option(&Agent::option_values(&heads), epsilon, &mut worker.rng),
                    Some(prev) => {
                        if worker.rng.gen::<f64>() < heads[prev].beta {
                            select_option(&Agent::option_values(&heads), epsilon, &mut worker.rng)
                        } else {
                            prev
                        }
                    }
                };
                let action = act(&heads[option].pi, &mut worker.rng);
                let result = worker.env.step(Action::ALL[action])?;
                self.agent.frames += 1;
                worker.ret += result.reward;
                worker.length += 1;
                worker.option_steps[option] += 1;
                let next = result.observation.index;
                steps.push(Step {
                    state,
                    option,
                    action,
                    reward: result.reward,
                    next,
                    done: result.done,
                    truncated: result.truncated,
                });
                segment.push(next);
                if result.done || result.truncated {
                    let record = EpisodeRecord {
                        episode: self.episodes,
                        worker: w,
                        ret: worker.ret,
                        length: worker.length,
                        reached_goal: result.done,
                        option_steps: std::mem::replace(&mut worker.option_steps, vec![0; cfg.num_options]),
                        frames: self.agent.frames,
                    };
                    worker.ret = 0.0;
                    worker.length = 0;
                    worker.option = None;
                    worker.env.reset();
                    self.episodes += 1;
                    sink.episode(&record)?;
                    inputs.segments.push(std::mem::replace(&mut segment, vec![worker.env.agent()]));
                } else {
                    worker.option = Some(option);
                }
            }
            if segment.len() >= 2 {
                inputs.segments.push(segment);
            }
            self.push_targets(&steps, &mut inputs)?;
        }

        self.agent.schedule_clock += cfg.rollout_length as u64;

        self.grads.clear();
        let terms = improvement_grads(
            &self.agent.params,
            &self.agent.bank,
            &inputs,
            &mut self.cache,
            &mut self.grads,
        )?;
        self.agent.apply(&mut self.grads)?;
        self.last_terms = terms;

        if self.agent.frames >= self.next_checkpoint {
            self.next_checkpoint = (self.agent.frames / self.checkpoint_every + 1) * self.checkpoint_every;
            sink.checkpoint(self)?;
        }
        Ok(terms)
    }

    /// n-step returns within the rollout, bootstrapped with the value on arrival.
    fn push_targets(&mut self, steps: &[Step], inputs: &mut LossInputs) -> Result<()> {
        let cfg = &self.agent.config;
        let (gamma, literal, epsilon) = (cfg.gamma, cfg.literal_max, self.agent.epsilon());
        let baseline = cfg.policy_baseline;
        let mut out = Vec::with_capacity(steps.len());
        let mut following = 0.0;
        for (i, st) in steps.iter().enumerate().rev() {
            let mut advantage = 0.0;
            let target = if st.done {
                st.reward
            } else {
                let heads = self.agent.heads_at(&mut self.cache, st.next)?;
                let own = &heads[st.option];
                let values = if literal {
                    own.q.clone()
                } else {
                    Agent::option_values(&heads)
                };
                advantage = own.q[st.option] - soft_value(&values, epsilon);
                if i + 1 < steps.len() && !st.truncated {
                    st.reward + gamma * following
                } else {
                    td_target(st.reward, Some(Arrival::from_heads(&heads, st.option, literal)), gamma)
                }
            };
            following = target;
            let signal = if baseline {
                let tape = self.cache.tape(&self.agent.params, &self.agent.bank, st.state, st.option)?;
                target - self.agent.params.option_value(tape, st.option)
            } else {
                target
            };
            out.push(TransitionInput {
                state: st.state,
                option: st.option,
                action: st.action,
                next_state: (!st.done).then_some(st.next),
                target,
                signal,
                advantage,
            });
        }
        out.reverse();
        inputs.transitions.extend(out);
        Ok(())
    }

    /// Trains until `episodes` more episodes have completed.
    pub fn run_episodes(&mut self, episodes: u64, sink: &mut dyn Sink) -> Result<()> {
        let target = self.episodes + episodes;
        while self.episodes < target {
            self.step(sink)?;
        }
        Ok(())
    }

    /// Trains for `updates` synchronized updates.
    pub fn run_updates(&mut self, updates: u64, sink: &mut dyn Sink) -> Result<()> {
        for _ in 0..updates {
            self.step(sink)?;
        }
        Ok(())
    }

    /// Replaces the task (new goal or blocked hallway) and restarts every worker's episode.
    pub fn retarget(&mut self, task: Task, phase: u64) -> Result<()> {
        let agent = self.agent.clone();
        let mut fresh = Self::with_phase(agent, task, self.seed, phase)?;
        fresh.checkpoint_every = self.checkpoint_every;
        fresh.next_checkpoint = self.next_checkpoint;
        fresh.episodes = self.episodes;
        *self = fresh;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: RunLog,
}

/// Trains a fresh agent for `episodes` episodes.
pub fn train(
    config: AgentConfig,
    task: Task,
    seed: u64,
    episodes: u64,
    sink: &mut dyn Sink,
) -> Result<TrainOutcome> {
    let agent = Agent::new(config, &task.layout, seed)?;
    let mut trainer = Trainer::new(agent, task, seed)?;
    let mut log = RunLog::default();
    let mut tee = Tee {
        log: &mut log,
        inner: sink,
    };
    trainer.run_episodes(episodes, &mut tee)?;
    Ok(TrainOutcome { trainer, log })
}

impl Task {
    /// Four-rooms task with the goal drawn from `goal` using the seed's goal stream.
    pub fn resolve(
        layout: Arc<GridLayout>,
        env: EnvConfig,
        goal: crate::env::GoalSpec,
        blocked: Option<HallwayId>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_stream(seed, STREAM_GOAL);
        let goal = goal.resolve(&layout, blocked, &mut rng)?;
        Ok(Self {
            layout,
            env,
            goal,
            blocked,
        })
    }
}
