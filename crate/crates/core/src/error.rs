use hipdream_autodiff::AutodiffError;
use hipdream_envs::EnvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("replay buffer has no episode with at least {needed} steps; collect more data")]
    InsufficientData { needed: usize },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training aborted after {0} consecutive non-finite losses")]
    Diverged(usize),
}

pub type Result<T> = std::result::Result<T, CoreError>;
