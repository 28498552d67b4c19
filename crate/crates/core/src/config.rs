//! Training configuration and its `key = value` text format.

use std::fmt;
use std::str::FromStr;

use hipdream_envs::Task;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Rungs of the ablation ladder. Each rung only adds components to the one
/// before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain recurrent world model with an actor-critic on its features.
    Dreamer,
    /// Adds the omega prediction head and its loss term.
    Decoder,
    /// Additionally feeds the predicted omega to the actor and critic.
    DecoderCond,
    /// Additionally runs the recurrent estimator and conditions the
    /// posterior on its output.
    Privileged,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Dreamer,
        Variant::Decoder,
        Variant::DecoderCond,
        Variant::Privileged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dreamer => "dreamer",
            Variant::Decoder => "decoder",
            Variant::DecoderCond => "decoder-cond",
            Variant::Privileged => "privileged",
        }
    }

    /// The world model predicts omega from its latent state.
    pub fn has_omega_head(self) -> bool {
        self != Variant::Dreamer
    }

    /// The actor and critic receive the predicted omega as an input.
    pub fn conditions_policy(self) -> bool {
        matches!(self, Variant::DecoderCond | Variant::Privileged)
    }

    /// The recurrent estimator exists and feeds the posterior.
    pub fn has_estimator(self) -> bool {
        self == Variant::Privileged
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "unknown model `{s}` (expected dreamer, decoder, decoder-cond or privileged)"
                ))
            })
    }
}

/// Everything that determines a training run.
///
/// The text form is one `key = value` per line; `#` starts a comment.
/// Keys not listed in [`TrainConfig::KEYS`] are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub model: Variant,
    pub seed: u64,
    /// Total environment steps, including prefill.
    pub steps: usize,
    /// Gradient updates per environment step.
    pub train_ratio: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub horizon: usize,
    /// Number of posterior states used as imagination starts per update
    /// (0 = all `batch_size * seq_len`).
    pub imag_starts: usize,
    pub episode_length: usize,

    pub deter_size: usize,
    pub latent_groups: usize,
    pub latent_classes: usize,
    pub hidden_size: usize,
    /// Hidden layers in every MLP head.
    pub mlp_layers: usize,
    pub estimator_size: usize,

    pub model_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,

    pub kl_scale: f64,
    pub kl_balance: f64,
    pub free_nats: f64,

    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub target_every: usize,
    pub min_log_std: f64,
    pub max_log_std: f64,

    pub prefill_episodes: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Write an intermediate checkpoint every this many env steps (0 = only
    /// the final one).
    pub checkpoint_every: usize,
    /// Record wall-clock seconds in the metrics; disable for byte-identical
    /// metrics across reruns.
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub const KEYS: [&'static str; 38] = [
        "task",
        "model",
        "seed",
        "steps",
        "train_ratio",
        "batch_size",
        "seq_len",
        "horizon",
        "imag_starts",
        "episode_length",
        "deter_size",
        "latent_groups",
        "latent_classes",
        "hidden_size",
        "mlp_layers",
        "estimator_size",
        "model_lr",
        "actor_lr",
        "critic_lr",
        "adam_eps",
        "grad_clip",
        "kl_scale",
        "kl_balance",
        "free_nats",
        "gamma",
        "lambda",
        "entropy_coef",
        "target_every",
        "min_log_std",
        "max_log_std",
        "prefill_episodes",
        "buffer_capacity",
        "eval_every",
        "eval_episodes",
        "checkpoint_every",
        "record_wall_time",
        // Accepted for readability of config files; must match `task`.
        "obs_dim",
        "action_dim",
    ];

    pub fn new(task: Task, model: Variant) -> Self {
        Self {
            task,
            model,
            seed: 0,
            steps: 100_000,
            train_ratio: 0.5,
            batch_size: 16,
            seq_len: 50,
            horizon: 15,
            imag_starts: 0,
            episode_length: 200,
            deter_size: 128,
            latent_groups: 16,
            latent_classes: 16,
            hidden_size: 128,
            mlp_layers: 2,
            estimator_size: 64,
            model_lr: 3e-4,
            actor_lr: 8e-5,
            critic_lr: 8e-5,
            adam_eps: 1e-5,
            grad_clip: 100.0,
            kl_scale: 1.0,
            kl_balance: 0.8,
            free_nats: 0.0,
            gamma: 0.995,
            lambda: 0.95,
            entropy_coef: 1e-4,
            target_every: 100,
            min_log_std: -5.0,
            max_log_std: 2.0,
            prefill_episodes: 5,
            buffer_capacity: 200_000,
            eval_every: 5_000,
            eval_episodes: 10,
            checkpoint_every: 0,
            record_wall_time: true,
        }
    }

    /// Parse a config file on top of the defaults for `pendulum`/`dreamer`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::new(Task::Pendulum, Variant::Dreamer);
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply every `key = value` line of `text` to `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut dims = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "obs_dim" || key == "action_dim" {
                dims.push((key.to_string(), value.to_string()));
                continue;
            }
            self.set(key, value)
                .map_err(|e| CoreError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        for (key, value) in dims {
            let expected = if key == "obs_dim" {
                self.task.obs_dim()
            } else {
                self.task.action_dim()
            };
            if value.parse::<usize>().ok() != Some(expected) {
                return Err(CoreError::Config(format!(
                    "{key} = {value} does not match task {} ({expected})",
                    self.task
                )));
            }
        }
        self.validate()
    }

    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CoreError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "model" => self.model = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "train_ratio" => self.train_ratio = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "imag_starts" => self.imag_starts = num(key, value)?,
            "episode_length" => self.episode_length = num(key, value)?,
            "deter_size" => self.deter_size = num(key, value)?,
            "latent_groups" => self.latent_groups = num(key, value)?,
            "latent_classes" => self.latent_classes = num(key, value)?,
            "hidden_size" => self.hidden_size = num(key, value)?,
            "mlp_layers" => self.mlp_layers = num(key, value)?,
            "estimator_size" => self.estimator_size = num(key, value)?,
            "model_lr" => self.model_lr = num(key, value)?,
            "actor_lr" => self.actor_lr = num(key, value)?,
            "critic_lr" => self.critic_lr = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "kl_scale" => self.kl_scale = num(key, value)?,
            "kl_balance" => self.kl_balance = num(key, value)?,
            "free_nats" => self.free_nats = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "entropy_coef" => self.entropy_coef = num(key, value)?,
            "target_every" => self.target_every = num(key, value)?,
            "min_log_std" => self.min_log_std = num(key, value)?,
            "max_log_std" => self.max_log_std = num(key, value)?,
            "prefill_episodes" => self.prefill_episodes = num(key, value)?,
            "buffer_capacity" => self.buffer_capacity = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "record_wall_time" => self.record_wall_time = num(key, value)?,
            _ => return Err(CoreError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("horizon", self.horizon),
            ("episode_length", self.episode_length),
            ("deter_size", self.deter_size),
            ("latent_groups", self.latent_groups),
            ("latent_classes", self.latent_classes),
            ("hidden_size", self.hidden_size),
            ("estimator_size", self.estimator_size),
            ("target_every", self.target_every),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(CoreError::Config(format!("`{k}` must be positive")));
            }
        }
        let bad = |k: &str, why: &str| Err(CoreError::Config(format!("`{k}` {why}")));
        if self.seq_len > self.episode_length {
            return bad("seq_len", "must not exceed episode_length");
        }
        if self.buffer_capacity < self.episode_length {
            return bad("buffer_capacity", "must hold at least one episode");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.kl_balance) {
            return bad("kl_balance", "must lie in [0, 1]");
        }
        if !(self.train_ratio >= 0.0 && self.train_ratio.is_finite()) {
            return bad("train_ratio", "must be a finite non-negative number");
        }
        if self.min_log_std >= self.max_log_std {
            return bad("min_log_std", "must be below max_log_std");
        }
        for (k, v) in [
            ("model_lr", self.model_lr),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("adam_eps", self.adam_eps),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(k, "must be a finite positive number");
            }
        }
        for (k, v) in [
            ("kl_scale", self.kl_scale),
            ("free_nats", self.free_nats),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(k, "must be a finite non-negative number");
            }
        }
        Ok(())
    }

    /// Canonical text form listing every key; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("task", self.task.to_string());
        kv("model", self.model.to_string());
        kv("seed", self.seed.to_string());
        kv("steps", self.steps.to_string());
        kv("train_ratio", self.train_ratio.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seq_len", self.seq_len.to_string());
        kv("horizon", self.horizon.to_string());
        kv("imag_starts", self.imag_starts.to_string());
        kv("episode_length", self.episode_length.to_string());
        kv("deter_size", self.deter_size.to_string());
        kv("latent_groups", self.latent_groups.to_string());
        kv("latent_classes", self.latent_classes.to_string());
        kv("hidden_size", self.hidden_size.to_string());
        kv("mlp_layers", self.mlp_layers.to_string());
        kv("estimator_size", self.estimator_size.to_string());
        kv("model_lr", self.model_lr.to_string());
        kv("actor_lr", self.actor_lr.to_string());
        kv("critic_lr", self.critic_lr.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("kl_scale", self.kl_scale.to_string());
        kv("kl_balance", self.kl_balance.to_string());
        kv("free_nats", self.free_nats.to_string());
        kv("gamma", self.gamma.to_string());
        kv("lambda", self.lambda.to_string());
        kv("entropy_coef", self.entropy_coef.to_string());
        kv("target_every", self.target_every.to_string());
        kv("min_log_std", self.min_log_std.to_string());
        kv("max_log_std", self.max_log_std.to_string());
        kv("prefill_episodes", self.prefill_episodes.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        s
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Number of imagination start states per update.
    pub fn imagination_starts(&self) -> usize {
        let all = self.batch_size * self.seq_len;
        if self.imag_starts == 0 {
            all
        } else {
            self.imag_starts.min(all)
        }
    }
}
