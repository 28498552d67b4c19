//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! Values live in [`Tensor`]s; a [`Tape`] records each operation applied to
//! [`Var`] handles and replays them in reverse from a scalar root. Trainable
//! weights are held in a [`ParamStore`] and bound onto a tape with
//! [`Tape::param`]; [`ParamStore::absorb`] copies the resulting gradients back.

mod check;
mod error;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_params};
pub use error::{AutodiffError, Result};
pub use params::{GradMode, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_in_place, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
