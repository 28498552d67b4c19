//! Building blocks shared by the world model and the agent: MLPs, recurrent
//! cells, distributions and the Adam optimizer.

pub mod dist;
pub mod layers;
pub mod optim;
pub mod rnn;

pub use dist::{
    kl_balanced, kl_categorical, kl_categorical_value, squashed_log_prob, CategoricalLatentDist,
    SquashedGaussianDist, UnitGaussianHead,
};
pub use layers::{Init, Linear, Mlp, Scheme};
pub use optim::{AdamConfig, AdamState, StepOutcome};
pub use rnn::{GruCell, LstmCell};
