//! Data collection, the collect/train loop, evaluation and omega traces.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hipdream_envs::{Env, EnvConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::Agent;
use crate::checkpoint;
use crate::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::metrics::{fmt_f64, MetricsLog, MetricsRow};
use crate::replay::{Episode, ReplayBuffer};
use crate::world_model::LossComponents;

/// Consecutive non-finite updates tolerated before training aborts.
pub const MAX_NONFINITE_STREAK: usize = 3;

/// Deterministic generator for stream `stream`, item `index` of a run.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_EVAL_POLICY: u64 = 5;

/// Who picks the actions of an episode.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Uniform in `[-1, 1]` per dimension.
    Random,
    /// The agent's actor; samples when `explore`, otherwise takes the mode.
    Agent { agent: &'a Agent, explore: bool },
}

/// Everything observed while running one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Replay entries (the final observation is not stored).
    pub episode: Episode,
    /// Reward of every control step.
    pub rewards: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    /// Per-step estimator output (privileged variant only).
    pub omega_est: Vec<Option<Vec<f64>>>,
    /// Per-step prediction-head output (variants with the head).
    pub omega_pred: Vec<Option<Vec<f64>>>,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Mean over steps and dimensions of `(ω̂ - ω)²`, if predictions exist.
    pub fn omega_mse(&self) -> Option<f64> {
        let omega = &self.episode.omega;
        let mut total = 0.0;
        let mut n = 0usize;
        for p in &self.omega_pred {
            let p = p.as_ref()?;
            for (a, b) in p.iter().zip(omega) {
                total += (a - b) * (a - b);
                n += 1;
            }
        }
        (n > 0).then(|| total / n as f64)
    }
}

pub fn env_config(cfg: &TrainConfig) -> EnvConfig {
    let mut e = EnvConfig::new(cfg.task);
    e.episode_length = cfg.episode_length;
    e
}

/// Run one full episode. `env_rng` drives the reset (and omega draw),
/// `policy_rng` drives exploration and latent sampling.
pub fn run_episode<R1: Rng, R2: Rng>(
    env: &mut Env,
    policy: Policy<'_>,
    omega: Option<&[f64]>,
    env_rng: &mut R1,
    policy_rng: &mut R2,
) -> Result<EpisodeRecord> {
    let action_dim = env.task().action_dim();
    let (mut obs, hidden) = env.reset(env_rng, omega)?;
    let mut episode = Episode::new(hidden.omega);
    let mut rec = EpisodeRecord {
        episode: Episode::new(Vec::new()),
        rewards: Vec::new(),
        actions: Vec::new(),
        omega_est: Vec::new(),
        omega_pred: Vec::new(),
    };
    let mut carry = match policy {
        Policy::Agent { agent, .. } => Some(agent.initial_carry()),
        Policy::Random => None,
    };
    episode.push(obs.clone(), vec![0.0; action_dim], 0.0);
    let length = env.config().episode_length;
    for step in 0..length {
        let (action, est, pred) = match (policy, carry.as_mut()) {
            (Policy::Agent { agent, explore }, Some(c)) => {
                let out = agent.act(c, &obs, explore, policy_rng)?;
                (out.action, out.omega_est, out.omega_pred)
            }
            _ => (
                (0..action_dim)
                    .map(|_| policy_rng.random_range(-1.0..=1.0))
                    .collect(),
                None,
                None,
            ),
        };
        let result = env.step(&action)?;
        rec.rewards.push(result.reward);
        rec.omega_est.push(est);
        rec.omega_pred.push(pred);
        if step + 1 < length {
            episode.push(result.observation.clone(), action.clone(), result.reward);
        }
        rec.actions.push(action);
        obs = result.observation;
    }
    rec.episode = episode;
    Ok(rec)
}

/// Run one episode and append it to `buffer`. A failing episode leaves the
/// buffer untouched.
pub fn collect_episode<R1: Rng, R2: Rng>(
    buffer: &mut ReplayBuffer,
    env: &mut Env,
    policy: Policy<'_>,
    env_rng: &mut R1,
    policy_rng: &mut R2,
) -> Result<EpisodeRecord> {
    let rec = run_episode(env, policy, None, env_rng, policy_rng)?;
    buffer.push(rec.episode.clone())?;
    Ok(rec)
}

/// Evaluation result over `n` episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across episodes.
    pub std: f64,
    /// Mean squared omega prediction error, for variants with the head.
    pub omega_mse: Option<f64>,
}

pub fn summarize(returns: Vec<f64>, mses: &[Option<f64>]) -> EvalSummary {
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let omega_mse = if mses.iter().all(Option::is_some) && !mses.is_empty() {
        Some(mses.iter().map(|m| m.unwrap_or(0.0)).sum::<f64>() / mses.len() as f64)
    } else {
        None
    };
    EvalSummary {
        returns,
        mean,
        std: var.sqrt(),
        omega_mse,
    }
}

/// `n` deterministic-policy episodes, fresh omega each (unless overridden),
/// each with its own seeded generator.
pub fn evaluate(agent: &Agent, n: usize, seed: u64, omega: Option<&[f64]>) -> Result<EvalSummary> {
    let mut env = Env::new(env_config(&agent.config))?;
    let mut returns = Vec::with_capacity(n);
    let mut mses = Vec::with_capacity(n);
    for i in 0..n {
        let rec = run_episode(
            &mut env,
            Policy::Agent {
                agent,
                explore: false,
            },
            omega,
            &mut stream_rng(seed, STREAM_EVAL, i as u64),
            &mut stream_rng(seed, STREAM_EVAL_POLICY, i as u64),
        )?;
        returns.push(rec.total_reward());
        mses.push(rec.omega_mse());
    }
    Ok(summarize(returns, &mses))
}

/// Mean return of the uniform random policy, for baselines.
pub fn evaluate_random(cfg: &TrainConfig, n: usize, seed: u64) -> Result<EvalSummary> {
    let mut env = Env::new(env_config(cfg))?;
    let mut returns = Vec::with_capacity(n);
    for i in 0..n {
        let rec = run_episode(
            &mut env,
            Policy::Random,
            None,
            &mut stream_rng(seed, STREAM_EVAL, i as u64),
            &mut stream_rng(seed, STREAM_EVAL_POLICY, i as u64),
        )?;
        returns.push(rec.total_reward());
    }
    Ok(summarize(returns, &[]))
}

/// One row of an omega trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub omega_true: Vec<f64>,
    pub omega_est: Option<Vec<f64>>,
    pub omega_pred: Option<Vec<f64>>,
}

/// Run `episodes` evaluation episodes at a fixed omega and record the
/// estimator and head outputs at every step.
pub fn trace_omega(agent: &Agent, omega: &[f64], episodes: usize, seed: u64) -> Result<Vec<TraceRow>> {
    let mut env = Env::new(env_config(&agent.config))?;
    let mut rows = Vec::new();
    for ep in 0..episodes {
        let rec = run_episode(
            &mut env,
            Policy::Agent {
                agent,
                explore: false,
            },
            Some(omega),
            &mut stream_rng(seed, STREAM_EVAL, ep as u64),
            &mut stream_rng(seed, STREAM_EVAL_POLICY, ep as u64),
        )?;
        for (step, (est, pred)) in rec.omega_est.into_iter().zip(rec.omega_pred).enumerate() {
            rows.push(TraceRow {
                episode: ep,
                step,
                omega_true: rec.episode.omega.clone(),
                omega_est: est,
                omega_pred: pred,
            });
        }
    }
    Ok(rows)
}

/// CSV with columns `episode,step,omega_true_*,omega_est_*,omega_pred_*`;
/// missing estimates are written as `nan`.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow], omega_dim: usize) -> Result<()> {
    let mut header = vec!["episode".to_string(), "step".to_string()];
    for prefix in ["omega_true", "omega_est", "omega_pred"] {
        header.extend((0..omega_dim).map(|i| format!("{prefix}_{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut cols = vec![r.episode.to_string(), r.step.to_string()];
        cols.extend(r.omega_true.iter().map(|v| fmt_f64(*v)));
        for v in [&r.omega_est, &r.omega_pred] {
            match v {
                Some(v) => cols.extend(v.iter().map(|x| fmt_f64(*x))),
                None => cols.extend((0..omega_dim).map(|_| "nan".to_string())),
            }
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Where a training run writes its files.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.txt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn checkpoint_at(&self, steps: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{steps:08}.json"))
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub metrics: MetricsLog,
    pub buffer: ReplayBuffer,
    pub env_steps: usize,
}

#[derive(Debug, Default)]
struct LossMeter {
    sum: LossComponents,
    n: usize,
}

impl LossMeter {
    fn add(&mut self, c: &LossComponents) {
        self.sum.total += c.total;
        self.sum.recon += c.recon;
        self.sum.reward += c.reward;
        self.sum.kl += c.kl;
        self.sum.omega_est += c.omega_est;
        self.sum.omega_head += c.omega_head;
        self.n += 1;
    }

    fn take(&mut self) -> Option<LossComponents> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let s = self.sum;
        *self = Self::default();
        Some(LossComponents {
            total: s.total / n,
            recon: s.recon / n,
            reward: s.reward / n,
            kl: s.kl / n,
            omega_est: s.omega_est / n,
            omega_head: s.omega_head / n,
        })
    }
}

/// Prefill with random episodes, then alternate collecting one exploring
/// episode with `train_ratio × episode_length` updates. Evaluates before the
/// first update and every `eval_every` env steps after that.
pub fn train(cfg: &TrainConfig, out: Option<&OutputDir>) -> Result<TrainOutcome> {
    train_with_progress(cfg, out, |_| {})
}

/// [`train`] with a callback invoked after each metrics row.
pub fn train_with_progress(
    cfg: &TrainConfig,
    out: Option<&OutputDir>,
    mut progress: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut agent = Agent::new(cfg)?;
    let mut env = Env::new(env_config(cfg))?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut env_rng = stream_rng(cfg.seed, STREAM_ENV, 0);
    let mut policy_rng = stream_rng(cfg.seed, STREAM_POLICY, 0);
    let mut train_rng = stream_rng(cfg.seed, STREAM_TRAIN, 0);
    let mut metrics = MetricsLog::new();
    if let Some(o) = out {
        std::fs::write(o.config(), cfg.to_text())?;
    }

    let mut env_steps = 0usize;
    for _ in 0..cfg.prefill_episodes.max(1) {
        collect_episode(&mut buffer, &mut env, Policy::Random, &mut env_rng, &mut policy_rng)?;
        env_steps += cfg.episode_length;
    }

    let mut eval_round = 0u64;
    let mut record = |agent: &Agent,
                      metrics: &mut MetricsLog,
                      loss: LossComponents,
                      env_steps: usize|
     -> Result<()> {
        let eval_seed = cfg.seed.wrapping_add(eval_round.wrapping_mul(1_000_003));
        eval_round += 1;
        let summary = evaluate(agent, cfg.eval_episodes, eval_seed, None)?;
        let row = MetricsRow {
            env_steps,
            eval_mean: summary.mean,
            eval_std: summary.std,
            loss,
            omega_mse: summary.omega_mse.unwrap_or(f64::NAN),
            wall_s: if cfg.record_wall_time {
                (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
            } else {
                0.0
            },
        };
        metrics.push(row)?;
        if let Some(o) = out {
            metrics.write(&o.metrics())?;
        }
        log::info!(
            "{} {} seed {}: {} steps, eval {:.2} ± {:.2}, loss {:.4}, omega mse {}",
            cfg.task,
            cfg.model,
            cfg.seed,
            env_steps,
            row.eval_mean,
            row.eval_std,
            row.loss.total,
            fmt_f64(row.omega_mse)
        );
        progress(&row);
        Ok(())
    };

    // Baseline row: untrained policy, losses measured on one batch.
    let probe = buffer.sample(cfg.batch_size, cfg.seq_len, &mut train_rng)?;
    let initial = agent.evaluate_world_loss(&probe, &mut train_rng)?;
    record(&agent, &mut metrics, initial, env_steps)?;

    let mut next_eval = env_steps + cfg.eval_every;
    let mut next_ckpt = if cfg.checkpoint_every > 0 {
        env_steps + cfg.checkpoint_every
    } else {
        usize::MAX
    };
    let mut budget = 0.0f64;
    let mut streak = 0usize;
    let mut meter = LossMeter::default();
    while env_steps < cfg.steps {
        collect_episode(
            &mut buffer,
            &mut env,
            Policy::Agent {
                agent: &agent,
                explore: true,
            },
            &mut env_rng,
            &mut policy_rng,
        )?;
        env_steps += cfg.episode_length;
        budget += cfg.train_ratio * cfg.episode_length as f64;
        while budget >= 1.0 {
            budget -= 1.0;
            let batch = buffer.sample(cfg.batch_size, cfg.seq_len, &mut train_rng)?;
            match agent.train_step(&batch, &mut train_rng) {
                Ok(report) => {
                    streak = 0;
                    meter.add(&report.world);
                }
                Err(CoreError::NonFinite(what)) => {
                    streak += 1;
                    log::warn!("skipped update with non-finite {what} ({streak} in a row)");
                    if streak >= MAX_NONFINITE_STREAK {
                        return Err(CoreError::Diverged(streak));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if env_steps >= next_eval || env_steps >= cfg.steps {
            let loss = match meter.take() {
                Some(l) => l,
                None => agent.evaluate_world_loss(
                    &buffer.sample(cfg.batch_size, cfg.seq_len, &mut train_rng)?,
                    &mut train_rng,
                )?,
            };
            record(&agent, &mut metrics, loss, env_steps)?;
            while next_eval <= env_steps {
                next_eval += cfg.eval_every;
            }
        }
        if env_steps >= next_ckpt {
            if let Some(o) = out {
                checkpoint::save(&agent, env_steps, &o.checkpoint_at(env_steps))?;
            }
            while next_ckpt <= env_steps {
                next_ckpt += cfg.checkpoint_every;
            }
        }
    }
    if let Some(o) = out {
        checkpoint::save(&agent, env_steps, &o.final_checkpoint())?;
    }
    Ok(TrainOutcome {
        agent,
        metrics,
        buffer,
        env_steps,
    })
}

/// Read a checkpoint, rejecting files whose config does not match `expect`
/// when one is given.
pub fn load_checkpoint(path: &Path, expect: Option<&TrainConfig>) -> Result<checkpoint::Checkpoint> {
    let ck = checkpoint::load(path)?;
    if let Some(cfg) = expect {
        if cfg.hash() != ck.agent.config.hash() {
            return Err(CoreError::Checkpoint(format!(
                "{} was trained with a different config",
                path.display()
            )));
        }
    }
    Ok(ck)
}
