//! World model, imagination actor-critic and training harness for control
//! tasks with hidden parameters.
//!
//! The model ladder:
//!
//! | variant        | omega head | omega to policy | estimator + posterior conditioning |
//! |----------------|------------|-----------------|------------------------------------|
//! | `dreamer`      |            |                 |                                    |
//! | `decoder`      | yes        |                 |                                    |
//! | `decoder-cond` | yes        | yes             |                                    |
//! | `privileged`   | yes        | yes             | yes                                |
//!
//! The true hidden parameter is stored in the replay buffer and used only as
//! a regression target inside the world-model loss.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod plot;
pub mod replay;
pub mod world_model;

pub use agent::{
    actor_loss, critic_loss, critic_loss_from, imagine_rollout, imagined_input, lambda_returns,
    lambda_returns_tape, ActOutput, ActionMode, Actor, Agent, Carry, Critic, ImagineOptions,
    ImaginedTrajectory, PolicyInput, UpdateReport,
};
pub use config::{TrainConfig, Variant};
pub use checkpoint::Checkpoint;
pub use error::{CoreError, Result};
pub use harness::{
    collect_episode, env_config, evaluate, evaluate_random, run_episode, stream_rng, summarize,
    trace_omega, train, train_with_progress, write_trace_csv, EpisodeRecord, EvalSummary,
    OutputDir, Policy, TraceRow, TrainOutcome,
};
pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};
pub use replay::{Episode, ReplayBuffer};
pub use world_model::{
    EpisodeBatch, EstimatorState, EstimatorValue, Heads, LatentMode, LossComponents, LossOptions,
    LossOutput, LossTerms, ModelDims, RssmState, RssmValue, WorldModel,
};
