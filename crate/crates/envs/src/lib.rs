//! Hidden-parameter control tasks integrated with hand-written ODEs.
//!
//! Each episode draws a hidden parameter `omega` (a mass or motor scale)
//! uniformly from the task's range. It changes the dynamics of every task and,
//! for sorting and pointmass, also which states are rewarded.
//!
//! | task      | obs | act | omega | meaning              | range        |
//! |-----------|-----|-----|-------|----------------------|--------------|
//! | pendulum  | 2   | 1   | 1     | pendulum mass scale  | [0.1, 2.0]   |
//! | throwing  | 4   | 1   | 1     | ball mass scale      | [0.2, 1.0]   |
//! | sorting   | 2   | 1   | 1     | object mass scale    | [0.2, 1.0]   |
//! | pointmass | 4   | 2   | 2     | motor scales         | [1, 2]²      |
//!
//! Integration uses kick-drift-kick steps of `dt` seconds, repeated
//! `action_repeat` times per control step. Episodes have a fixed length and no
//! early termination.

mod config;
mod env;
mod task;
mod trajectory;

use thiserror::Error;

pub use config::{EnvConfig, PendulumParams, PointmassParams, SortingParams, ThrowingParams};
pub use env::{observe, reward, sorting_goal, Body, Env, EnvState, StepResult};
pub use task::{sample_omega, HiddenParams, ParamRange, Task};
pub use trajectory::{write_trajectory_csv, TrajectoryRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown task `{0}` (expected pendulum, throwing, sorting or pointmass)")]
    UnknownTask(String),
    #[error("omega {omega:?} outside range {lo:?}..={hi:?}")]
    OmegaOutOfRange {
        omega: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    #[error("non-finite action {0:?}")]
    NonFiniteAction(Vec<f64>),
    #[error("action has {got} dimensions, task expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    EpisodeOver,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}
