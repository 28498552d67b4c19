#![allow(dead_code)]

use hipdream_autodiff::{ParamStore, Tensor};
use hipdream_core::{EpisodeBatch, TrainConfig, Variant};
use hipdream_envs::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// h=8, G=2, C=3 model with one hidden layer per head.
pub fn tiny_config(task: Task, variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::new(task, variant);
    cfg.deter_size = 8;
    cfg.latent_groups = 2;
    cfg.latent_classes = 3;
    cfg.hidden_size = 8;
    cfg.mlp_layers = 1;
    cfg.estimator_size = 4;
    cfg.batch_size = 2;
    cfg.seq_len = 3;
    cfg.horizon = 4;
    cfg
}

/// Small but trainable model for short end-to-end runs.
pub fn small_config(task: Task, variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::new(task, variant);
    cfg.deter_size = 16;
    cfg.latent_groups = 4;
    cfg.latent_classes = 4;
    cfg.hidden_size = 16;
    cfg.mlp_layers = 1;
    cfg.estimator_size = 8;
    cfg.batch_size = 4;
    cfg.seq_len = 16;
    cfg.horizon = 5;
    cfg.imag_starts = 16;
    cfg.train_ratio = 0.02;
    cfg.prefill_episodes = 2;
    cfg.eval_every = 1000;
    cfg.eval_episodes = 2;
    cfg.record_wall_time = false;
    cfg
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(
        &[rows, cols],
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Random batch with a constant omega per window and is-first on step 0.
pub fn synthetic_batch(cfg: &TrainConfig, seed: u64) -> EpisodeBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, l) = (cfg.batch_size, cfg.seq_len);
    let task = cfg.task;
    let omegas: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            let r = task.omega_range();
            r.lo.iter().zip(&r.hi).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
        })
        .collect();
    let mut omega = Vec::new();
    let mut is_first = Vec::new();
    let mut prev_action = rand_tensor(&mut rng, l * b, task.action_dim(), -1.0, 1.0);
    for t in 0..l {
        for w in &omegas {
            omega.extend_from_slice(w);
            is_first.push(t == 0);
        }
    }
    for v in &mut prev_action.data_mut()[..b * task.action_dim()] {
        *v = 0.0;
    }
    EpisodeBatch {
        batch: b,
        len: l,
        obs: rand_tensor(&mut rng, l * b, task.obs_dim(), -1.0, 1.0),
        prev_action,
        reward: rand_tensor(&mut rng, l * b, 1, 0.0, 1.0),
        omega: Tensor::new(&[l * b, task.omega_dim()], omega).unwrap(),
        is_first,
    }
}

/// Perturb every parameter so checks do not sit on zero-initialized layers.
pub fn jitter(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Central-difference check over every scalar of a model's own parameter
/// store. Returns the worst `|analytic - numeric| / max(|numeric|, 1)`.
pub fn model_fd_check<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    f: impl Fn(&M, &mut hipdream_autodiff::Tape) -> hipdream_autodiff::Var,
    eps: f64,
) -> f64 {
    use hipdream_autodiff::{GradMode, Tape};
    let mut tape = Tape::new();
    let root = f(model, &mut tape);
    let grads = tape.backward(root).unwrap();
    store(model).absorb(&tape, &grads, GradMode::Overwrite);
    drop(tape);
    let eval = |m: &M| {
        let mut t = Tape::new();
        let r = f(m, &mut t);
        t.item(r)
    };
    let ids: Vec<_> = store(model).ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        for i in 0..store(model).value(id).len() {
            let base = store(model).value(id).data()[i];
            store(model).value_mut(id).data_mut()[i] = base + eps;
            let up = eval(model);
            store(model).value_mut(id).data_mut()[i] = base - eps;
            let down = eval(model);
            store(model).value_mut(id).data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = store(model).grad(id).data()[i];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    worst
}
