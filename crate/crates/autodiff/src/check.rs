//! Central-difference gradient checks. These are the independent oracle for
//! every analytic gradient in the workspace.

use crate::error::{AutodiffError, Result};
use crate::params::{GradMode, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn scalar_root(tape: &Tape, root: Var) -> Result<f64> {
    let v = tape.value(root);
    v.item().ok_or_else(|| AutodiffError::NonScalarRoot(v.shape().to_vec()))
}

/// Max over coordinates of `|analytic - central| / max(1, |central|)` for a
/// scalar function `f` built on a fresh tape around input `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.var(x.clone());
    let root = f(&mut tape, xv)?;
    let analytic = tape.backward(root)?.wrt(&tape, xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(probe);
        let r = f(&mut t, v)?;
        scalar_root(&t, r)
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same check over every scalar of every parameter in `store`. `f` must be
/// deterministic: it is re-run twice per coordinate.
pub fn finite_diff_check_params<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let grads = tape.backward(root)?;
    store.absorb(&tape, &grads, GradMode::Overwrite);
    drop(tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = f(&mut t, s)?;
        scalar_root(&t, r)
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let base = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = base + eps;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = base - eps;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(store.grad(id).data()[i], numeric));
        }
    }
    Ok(worst)
}
