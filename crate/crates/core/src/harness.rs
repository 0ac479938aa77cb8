//! Run orchestration: configs, per-seed run directories, checkpoints, sweeps and reports.
//!
//! A run directory looks like
//!
//! ```text
//! <output_dir>/
//!   manifest.json        name, config hash, crate version
//!   config.toml          the exact config that produced the run
//!   summary.csv          one row per seed
//!   seed-<k>/
//!     episodes.csv       one row per episode
//!     checkpoints.csv    one row per checkpoint
//!     checkpoints/<frames>/{params.json,attention.csv,usage.csv,metrics.json}
//!     final/...          same files at the end of training
//!     transfer.json      transfer runs only
//! ```
//!
//! Nothing written depends on wall-clock time, so identical configs give identical bytes.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Agent, AgentConfig, EpisodeRecord, RunLog, Sink, Task, Tee, Trainer};
use crate::checkpoint::Checkpoint;
use crate::env::{EnvConfig, GoalSpec, GridLayout};
use crate::error::{config_err, Error, Result};
use crate::metrics::{
    attention_overlap, attentive_coverage, evaluate, usage_attention_consistency, AttentionSnapshot,
    Evaluation, OverlapThresholds, UsageMap,
};
use crate::transfer::{continue_with_transfer, episodes_to_recover, TransferSpec};

fn default_checkpoint_every() -> u64 {
    100_000
}

fn default_eval_episodes() -> u64 {
    50
}

fn default_eval_epsilon() -> f64 {
    0.1
}

fn default_layout() -> String {
    "four_rooms".into()
}

fn default_goal() -> GoalSpec {
    GoalSpec::Random
}

fn default_window() -> usize {
    100
}

fn default_threshold() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Missing lists fall back to the single value in `[agent]`.
    pub num_options: Option<Vec<usize>>,
    pub w1: Option<Vec<f64>>,
    pub w2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Training episodes per seed (before any transfer).
    pub episodes: u64,
    /// Environment frames between checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u64,
    #[serde(default = "default_eval_epsilon")]
    pub eval_epsilon: f64,
    /// `four_rooms` or a path to a map file.
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default = "default_goal")]
    pub goal: GoalSpec,
    /// Trailing window for learning curves and recovery detection.
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// Mean episode length counted as solved.
    #[serde(default = "default_threshold")]
    pub solved_length: f64,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub overlap: OverlapThresholds,
    #[serde(default)]
    pub transfer: Option<TransferSpec>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, output_dir: impl Into<PathBuf>, seeds: Vec<u64>, episodes: u64) -> Self {
        Self {
            name: name.into(),
            output_dir: output_dir.into(),
            seeds,
            episodes,
            checkpoint_every: default_checkpoint_every(),
            eval_episodes: default_eval_episodes(),
            eval_epsilon: default_eval_epsilon(),
            layout: default_layout(),
            goal: default_goal(),
            smoothing_window: default_window(),
            solved_length: default_threshold(),
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            overlap: OverlapThresholds::default(),
            transfer: None,
            sweep: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = toml::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config_err("seed list must not be empty");
        }
        if self.checkpoint_every == 0 {
            return config_err("checkpoint_every must be positive");
        }
        if self.eval_episodes == 0 || self.smoothing_window == 0 {
            return config_err("eval_episodes and smoothing_window must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return config_err("eval_epsilon must lie in [0, 1]");
        }
        self.agent.clone().effective().validate()
    }

    pub fn layout(&self) -> Result<Arc<GridLayout>> {
        Ok(Arc::new(GridLayout::load(&self.layout)?))
    }

    pub fn task(&self, layout: Arc<GridLayout>, seed: u64) -> Result<Task> {
        Task::resolve(layout, self.env, self.goal, None, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub crate_version: String,
    pub seeds: Vec<u64>,
}

/// Metrics written at each checkpoint and at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub frames: u64,
    pub episodes: u64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub dominant_usage: f64,
    pub option_fractions: Vec<f64>,
    pub least_coverage: f64,
    pub most_coverage: f64,
    pub overlap: f64,
    pub consistency: Option<f64>,
}

impl CheckpointMetrics {
    pub fn compute(trainer: &Trainer, eval: &Evaluation, overlap: OverlapThresholds) -> Self {
        let snap = AttentionSnapshot::of(&trainer.agent.bank, trainer.agent.frames);
        let (least, most) = attentive_coverage(&snap);
        Self {
            frames: trainer.agent.frames,
            episodes: trainer.episodes(),
            mean_return: eval.mean_return,
            mean_length: eval.mean_length,
            dominant_usage: eval.dominant_usage,
            option_fractions: eval.option_fractions.clone(),
            least_coverage: least,
            most_coverage: most,
            overlap: attention_overlap(&snap, overlap),
            consistency: usage_attention_consistency(&eval.usage, &snap),
        }
    }
}

fn create_file(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(File::create(path)?)
}

fn write_attention(path: &Path, layout: &GridLayout, bank: &crate::attention::AttentionBank) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["option", "state", "row", "col", "h"])?;
    for o in 0..bank.num_options() {
        for s in 0..bank.dim() {
            let c = layout.cell(s);
            w.write_record([
                o.to_string(),
                s.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                bank.value(o, s).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_usage(path: &Path, layout: &GridLayout, usage: &UsageMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["state", "row", "col", "option", "count"])?;
    for s in 0..usage.num_states {
        let c = layout.cell(s);
        for o in 0..usage.num_options {
            w.write_record([
                s.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                o.to_string(),
                usage.count(s, o).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes params, attention, usage and metrics for the trainer's current state.
pub fn write_snapshot(dir: &Path, trainer: &Trainer, cfg: &RunConfig) -> Result<CheckpointMetrics> {
    fs::create_dir_all(dir)?;
    let eval = evaluate(
        &trainer.agent,
        trainer.task(),
        cfg.eval_episodes,
        cfg.eval_epsilon,
        trainer.seed() ^ trainer.agent.frames,
    )?;
    let metrics = CheckpointMetrics::compute(trainer, &eval, cfg.overlap);
    let layout = &trainer.task().layout;
    Checkpoint::of(trainer).save(dir.join("params.json"))?;
    write_attention(&dir.join("attention.csv"), layout, &trainer.agent.bank)?;
    write_usage(&dir.join("usage.csv"), layout, &eval.usage)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Streams episodes and checkpoints of one seed to disk.
pub struct RunSink<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    episodes: csv::Writer<File>,
    checkpoints: csv::Writer<File>,
    num_options: usize,
    /// 0 before a transfer, 1 after.
    pub phase: u8,
}

impl<'a> RunSink<'a> {
    pub fn create(dir: &Path, cfg: &'a RunConfig, num_options: usize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut episodes = csv::Writer::from_writer(create_file(&dir.join("episodes.csv"))?);
        let mut header = vec![
            "episode".to_string(),
            "worker".into(),
            "phase".into(),
            "return".into(),
            "length".into(),
            "reached_goal".into(),
            "frames".into(),
        ];
        header.extend((0..num_options).map(|o| format!("usage_{o}")));
        episodes.write_record(&header)?;
        let mut checkpoints = csv::Writer::from_writer(create_file(&dir.join("checkpoints.csv"))?);
        checkpoints.write_record([
            "frames",
            "episodes",
            "phase",
            "mean_length",
            "dominant_usage",
            "least_coverage",
            "most_coverage",
            "overlap",
            "consistency",
        ])?;
        Ok(Self {
            cfg,
            dir: dir.to_path_buf(),
            episodes,
            checkpoints,
            num_options,
            phase: 0,
        })
    }

    pub fn finish(&mut self) -> Result<()> {
        self.episodes.flush()?;
        self.checkpoints.flush()?;
        Ok(())
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Sink for RunSink<'_> {
    fn episode(&mut self, r: &EpisodeRecord) -> Result<()> {
        let mut row = vec![
            r.episode.to_string(),
            r.worker.to_string(),
            self.phase.to_string(),
            r.ret.to_string(),
            r.length.to_string(),
            u8::from(r.reached_goal).to_string(),
            r.frames.to_string(),
        ];
        debug_assert_eq!(r.option_steps.len(), self.num_options);
        row.extend(r.usage_fractions().iter().map(f64::to_string));
        self.episodes.write_record(&row)?;
        Ok(())
    }

    fn checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        let dir = self
            .dir
            .join("checkpoints")
            .join(format!("{:010}", trainer.agent.frames));
        let m = write_snapshot(&dir, trainer, self.cfg)?;
        self.checkpoints.write_record([
            m.frames.to_string(),
            m.episodes.to_string(),
            self.phase.to_string(),
            m.mean_length.to_string(),
            m.dominant_usage.to_string(),
            m.least_coverage.to_string(),
            m.most_coverage.to_string(),
            m.overlap.to_string(),
            opt_str(m.consistency),
        ])?;
        self.checkpoints.flush()?;
        Ok(())
    }
}

/// Final per-seed numbers for `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub goal: usize,
    pub episodes: u64,
    pub frames: u64,
    /// Mean training episode length over the last 500 episodes.
    pub final_mean_length: f64,
    /// Sum of training episode lengths over the first 10,000 episodes.
    pub length_auc_10k: f64,
    pub metrics: CheckpointMetrics,
    /// Post-transfer episodes until the trailing mean drops below the solved length.
    pub recovered_after: Option<usize>,
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn write_diagnostics(dir: &Path, trainer: &Trainer, err: &Error) -> Result<()> {
    let mut f = create_file(&dir.join("diagnostics.txt"))?;
    writeln!(f, "error: {err}")?;
    writeln!(f, "episodes: {}", trainer.episodes())?;
    writeln!(f, "frames: {}", trainer.agent.frames)?;
    writeln!(f, "updates: {}", trainer.agent.updates)?;
    writeln!(f, "last loss: {:?}", trainer.last_loss())?;
    Ok(())
}

fn run_phase(trainer: &mut Trainer, episodes: u64, sink: &mut RunSink<'_>, log: &mut RunLog, dir: &Path) -> Result<()> {
    let result = trainer.run_episodes(episodes, &mut Tee { log, inner: sink });
    if let Err(e) = result {
        sink.finish()?;
        write_diagnostics(dir, trainer, &e)?;
        return Err(e);
    }
    Ok(())
}

fn summarize(trainer: &Trainer, log: &RunLog, metrics: CheckpointMetrics, recovered_after: Option<usize>) -> SeedSummary {
    SeedSummary {
        seed: trainer.seed(),
        goal: trainer.task().goal,
        episodes: trainer.episodes(),
        frames: trainer.agent.frames,
        final_mean_length: log.final_mean_length(500),
        length_auc_10k: log.length_auc(10_000),
        metrics,
        recovered_after,
    }
}

/// Trains one seed into `root/seed-<k>/`.
pub fn train_seed(cfg: &RunConfig, layout: Arc<GridLayout>, seed: u64, root: &Path) -> Result<(SeedSummary, RunLog)> {
    let dir = seed_dir(root, seed);
    let task = cfg.task(layout, seed)?;
    let agent = Agent::new(cfg.agent.clone(), &task.layout, seed)?;
    let mut trainer = Trainer::new(agent, task, seed)?;
    trainer.set_checkpoint_every(cfg.checkpoint_every);
    let mut sink = RunSink::create(&dir, cfg, trainer.agent.config.num_options)?;
    let mut log = RunLog::default();
    run_phase(&mut trainer, cfg.episodes, &mut sink, &mut log, &dir)?;
    sink.finish()?;
    let metrics = write_snapshot(&dir.join("final"), &trainer, cfg)?;
    Ok((summarize(&trainer, &log, metrics, None), log))
}

fn write_manifest(cfg: &RunConfig, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash()?,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seeds: cfg.seeds.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    fs::write(root.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_summary(path: &Path, rows: &[SeedSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let k = rows.first().map_or(0, |r| r.metrics.option_fractions.len());
    let mut header: Vec<String> = [
        "seed",
        "goal",
        "episodes",
        "frames",
        "final_mean_length",
        "length_auc_10k",
        "eval_mean_length",
        "dominant_usage",
        "least_coverage",
        "most_coverage",
        "overlap",
        "consistency",
        "recovered_after",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..k).map(|o| format!("usage_{o}")));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.seed.to_string(),
            r.goal.to_string(),
            r.episodes.to_string(),
            r.frames.to_string(),
            r.final_mean_length.to_string(),
            r.length_auc_10k.to_string(),
            r.metrics.mean_length.to_string(),
            r.metrics.dominant_usage.to_string(),
            r.metrics.least_coverage.to_string(),
            r.metrics.most_coverage.to_string(),
            r.metrics.overlap.to_string(),
            opt_str(r.metrics.consistency),
            r.recovered_after.map(|v| v.to_string()).unwrap_or_default(),
        ];
        row.extend(r.metrics.option_fractions.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains every seed of `cfg`; returns the run directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    cmd_train_with_layout(cfg, cfg.layout()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    /// Index of the first post-switch episode in `episodes.csv`.
    pub boundary: u64,
    pub goal_before: usize,
    pub goal_after: usize,
    pub blocked: Option<crate::env::HallwayId>,
    pub frozen_unchanged: bool,
    pub recovered_after: Option<usize>,
}

fn transfer_seed(
    cfg: &RunConfig,
    spec: &TransferSpec,
    trainer: Trainer,
    log: RunLog,
    mut sink: RunSink<'_>,
    dir: &Path,
) -> Result<SeedSummary> {
    sink.phase = 1;
    let out = continue_with_transfer(trainer, log, spec, &mut sink)?;
    sink.finish()?;
    let boundary = out.log.transfer_boundary.unwrap_or(0);
    let recovered_after = episodes_to_recover(
        &out.log.lengths(),
        boundary as usize,
        cfg.smoothing_window,
        cfg.solved_length,
    );
    let record = TransferRecord {
        boundary,
        goal_before: out.before.goal,
        goal_after: out.trainer.task().goal,
        blocked: out.trainer.task().blocked,
        frozen_unchanged: out.frozen_unchanged,
        recovered_after,
    };
    write_json(&dir.join("transfer.json"), &record)?;
    if !out.frozen_unchanged {
        return Err(Error::Training("frozen parameters changed during transfer".into()));
    }
    let metrics = write_snapshot(&dir.join("final"), &out.trainer, cfg)?;
    Ok(summarize(&out.trainer, &out.log, metrics, recovered_after))
}

/// Runs the `[transfer]` protocol for every seed, or once from `checkpoint` when given.
pub fn cmd_transfer(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let spec = cfg
        .transfer
        .clone()
        .ok_or_else(|| Error::Config("config has no [transfer] section".into()))?;
    let root = cfg.output_dir.clone();
    write_manifest(cfg, &root)?;
    let layout = cfg.layout()?;
    let mut rows = Vec::new();
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(path)?;
        let base = cfg.task(layout.clone(), ck.seed)?;
        let task = ck.task(&base)?;
        let dir = seed_dir(&root, ck.seed);
        let mut trainer = Trainer::new(ck.agent, task, ck.seed)?;
        trainer.set_episodes(ck.episodes);
        trainer.set_checkpoint_every(cfg.checkpoint_every);
        let sink = RunSink::create(&dir, cfg, trainer.agent.config.num_options)?;
        rows.push(transfer_seed(cfg, &spec, trainer, RunLog::default(), sink, &dir)?);
    } else {
        for &seed in &cfg.seeds {
            let dir = seed_dir(&root, seed);
            let task = cfg.task(layout.clone(), seed)?;
            let agent = Agent::new(cfg.agent.clone(), &task.layout, seed)?;
            let mut trainer = Trainer::new(agent, task, seed)?;
            trainer.set_checkpoint_every(cfg.checkpoint_every);
            let mut sink = RunSink::create(&dir, cfg, trainer.agent.config.num_options)?;
            let mut log = RunLog::default();
            run_phase(&mut trainer, spec.pre_train_episodes, &mut sink, &mut log, &dir)?;
            write_snapshot(&dir.join("pre_transfer"), &trainer, cfg)?;
            rows.push(transfer_seed(cfg, &spec, trainer, log, sink, &dir)?);
        }
    }
    write_summary(&root.join("summary.csv"), &rows)?;
    Ok(root)
}

/// One cell of a sweep with its seed-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell: usize,
    pub num_options: usize,
    pub w1: f64,
    pub w2: f64,
    pub final_mean_length: f64,
    pub dominant_usage: f64,
    pub least_coverage: f64,
    pub most_coverage: f64,
    pub overlap: f64,
    pub consistency: Option<f64>,
}

/// The cells of the `[sweep]` grid, options outermost.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<AgentConfig>> {
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] grid".into()))?;
    let options = grid.num_options.clone().unwrap_or_else(|| vec![cfg.agent.num_options]);
    let w1s = grid.w1.clone().unwrap_or_else(|| vec![cfg.agent.w1]);
    let w2s = grid.w2.clone().unwrap_or_else(|| vec![cfg.agent.w2]);
    if options.is_empty() || w1s.is_empty() || w2s.is_empty() {
        return config_err("sweep grid is empty");
    }
    let mut cells = Vec::new();
    for &n in &options {
        for &w1 in &w1s {
            for &w2 in &w2s {
                cells.push(AgentConfig {
                    num_options: n,
                    w1,
                    w2,
                    ..cfg.agent.clone()
                });
            }
        }
    }
    Ok(cells)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains every grid cell over every seed; writes `sweep.csv` ranked by overlap.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let cells = sweep_cells(cfg)?;
    let root = cfg.output_dir.clone();
    write_manifest(cfg, &root)?;
    let layout = cfg.layout()?;
    let mut results = Vec::new();
    for (i, agent) in cells.into_iter().enumerate() {
        let cell_cfg = RunConfig {
            agent: agent.clone(),
            output_dir: root.join(format!("cell-{i}")),
            sweep: None,
            ..cfg.clone()
        };
        cell_cfg.validate()?;
        let cell_root = cmd_train_with_layout(&cell_cfg, layout.clone())?;
        let rows = read_summary_rows(&cell_root)?;
        results.push(SweepCell {
            cell: i,
            num_options: agent.num_options,
            w1: agent.w1,
            w2: agent.w2,
            final_mean_length: mean(rows.iter().map(|r| r.final_mean_length)),
            dominant_usage: mean(rows.iter().map(|r| r.metrics.dominant_usage)),
            least_coverage: mean(rows.iter().map(|r| r.metrics.least_coverage)),
            most_coverage: mean(rows.iter().map(|r| r.metrics.most_coverage)),
            overlap: mean(rows.iter().map(|r| r.metrics.overlap)),
            consistency: {
                let c: Vec<f64> = rows.iter().filter_map(|r| r.metrics.consistency).collect();
                (!c.is_empty()).then(|| mean(c.into_iter()))
            },
        });
    }
    let mut ranked = results.clone();
    ranked.sort_by(|a, b| b.overlap.total_cmp(&a.overlap).then(a.cell.cmp(&b.cell)));
    let mut w = csv::Writer::from_writer(create_file(&root.join("sweep.csv"))?);
    w.write_record([
        "rank",
        "cell",
        "num_options",
        "w1",
        "w2",
        "final_mean_length",
        "dominant_usage",
        "least_coverage",
        "most_coverage",
        "overlap",
        "consistency",
    ])?;
    for (rank, c) in ranked.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            c.cell.to_string(),
            c.num_options.to_string(),
            c.w1.to_string(),
            c.w2.to_string(),
            c.final_mean_length.to_string(),
            c.dominant_usage.to_string(),
            c.least_coverage.to_string(),
            c.most_coverage.to_string(),
            c.overlap.to_string(),
            opt_str(c.consistency),
        ])?;
    }
    w.flush()?;
    write_json(&root.join("sweep.json"), &results)?;
    Ok(root)
}

fn cmd_train_with_layout(cfg: &RunConfig, layout: Arc<GridLayout>) -> Result<PathBuf> {
    let root = cfg.output_dir.clone();
    write_manifest(cfg, &root)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        rows.push(train_seed(cfg, layout.clone(), seed, &root)?.0);
    }
    write_summary(&root.join("summary.csv"), &rows)?;
    write_json(&root.join("summary.json"), &rows)?;
    Ok(root)
}

fn read_summary_rows(root: &Path) -> Result<Vec<SeedSummary>> {
    Ok(serde_json::from_str(&fs::read_to_string(root.join("summary.json"))?)?)
}

#[derive(Debug, Deserialize)]
struct EpisodeRow {
    episode: u64,
    #[serde(rename = "return")]
    ret: f64,
    length: f64,
}

/// Trailing mean over `window` entries (shorter at the start).
pub fn trailing_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
}

fn seed_dirs(root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    if root.is_dir() {
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse().ok()) {
                if entry.path().is_dir() {
                    out.push((seed, entry.path()));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Learning curve, dominance track, heatmap and usage CSVs under `<run>/report/`.
pub fn cmd_report(root: &Path) -> Result<Report> {
    let dirs = seed_dirs(root)?;
    if dirs.is_empty() {
        return config_err(format!("{} holds no seed directories", root.display()));
    }
    let window = match RunConfig::load(root.join("config.toml")) {
        Ok(cfg) => cfg.smoothing_window,
        Err(_) => default_window(),
    };
    let out = root.join("report");
    fs::create_dir_all(&out)?;
    let mut warnings = Vec::new();
    let mut curves: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut seeds = Vec::new();
    let mut dominance = csv::Writer::from_writer(create_file(&out.join("dominance.csv"))?);
    dominance.write_record(["seed", "frames", "episodes", "phase", "dominant_usage"])?;

    for (seed, dir) in &dirs {
        let episodes = dir.join("episodes.csv");
        if !episodes.is_file() {
            warnings.push(format!("seed {seed}: missing episodes.csv, skipped"));
            continue;
        }
        let mut rows: Vec<EpisodeRow> = csv::Reader::from_path(&episodes)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.episode);
        if rows.is_empty() {
            warnings.push(format!("seed {seed}: no episodes, skipped"));
            continue;
        }
        let lengths: Vec<f64> = rows.iter().map(|r| r.length).collect();
        let returns: Vec<f64> = rows.iter().map(|r| r.ret).collect();
        curves.push((trailing_mean(&lengths, window), trailing_mean(&returns, window)));
        seeds.push(*seed);

        let ck = dir.join("checkpoints.csv");
        if ck.is_file() {
            let mut r = csv::Reader::from_path(&ck)?;
            for rec in r.records() {
                let rec = rec?;
                dominance.write_record([
                    seed.to_string(),
                    rec[0].to_string(),
                    rec[1].to_string(),
                    rec[2].to_string(),
                    rec[4].to_string(),
                ])?;
            }
        }
        let fin = dir.join("final");
        for (name, target) in [("attention.csv", "attention"), ("usage.csv", "usage")] {
            let src = fin.join(name);
            if src.is_file() {
                fs::copy(&src, out.join(format!("{target}_seed{seed}.csv")))?;
            } else {
                warnings.push(format!("seed {seed}: missing final/{name}"));
            }
        }
    }
    dominance.flush()?;
    if curves.is_empty() {
        return config_err(format!("{} holds no episode logs", root.display()));
    }

    let longest = curves.iter().map(|c| c.0.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(create_file(&out.join("curve.csv"))?);
    w.write_record(["episode", "mean_length", "std_length", "mean_return", "std_return", "seeds"])?;
    for i in 0..longest {
        let l: Vec<f64> = curves.iter().filter_map(|c| c.0.get(i).copied()).collect();
        let r: Vec<f64> = curves.iter().filter_map(|c| c.1.get(i).copied()).collect();
        let (ml, sl) = mean_std(&l);
        let (mr, sr) = mean_std(&r);
        w.write_record([
            (i + 1).to_string(),
            ml.to_string(),
            sl.to_string(),
            mr.to_string(),
            sr.to_string(),
            l.len().to_string(),
        ])?;
    }
    w.flush()?;
    if !warnings.is_empty() {
        fs::write(out.join("warnings.txt"), warnings.join("\n") + "\n")?;
    }
    Ok(Report { dir: out, seeds, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_mean_by_hand() {
        assert_eq!(trailing_mean(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = RunConfig::new("x", "out", vec![1, 2], 10);
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        let other = RunConfig { episodes: 11, ..cfg };
        assert_ne!(other.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(RunConfig::new("x", "o", vec![], 1).validate().is_err());
        let mut c = RunConfig::new("x", "o", vec![0], 1);
        c.checkpoint_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_grid_enumeration() {
        let mut cfg = RunConfig::new("x", "o", vec![0], 1);
        assert!(sweep_cells(&cfg).is_err());
        cfg.sweep = Some(SweepGrid {
            num_options: None,
            w1: Some(vec![0.0, 2.0, 4.0]),
            w2: Some(vec![0.0, 2.0]),
        });
        let cells = sweep_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[5].w1, cells[5].w2), (4.0, 2.0));
        cfg.sweep = Some(SweepGrid {
            num_options: Some(vec![]),
            w1: None,
            w2: None,
        });
        assert!(sweep_cells(&cfg).is_err());
    }

    #[test]
    fn report_on_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(cmd_report(dir.path()).is_err());
    }
}
