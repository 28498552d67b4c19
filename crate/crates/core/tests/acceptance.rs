//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1–4 and 8 run on every `cargo test`. Criteria 5–7 train 21
//! agents for 100k environment steps each (several CPU-hours) and run only
//! with `--full` or `HIPDREAM_ACCEPTANCE_FULL=1`:
//!
//! ```text
//! cargo test --release -p hipdream-core --test acceptance -- --full
//! ```
//!
//! Training runs are written under `HIPDREAM_ACCEPTANCE_DIR` (default
//! `target/acceptance-runs`). A run whose directory already holds a final
//! checkpoint trained with the identical config is reused; training is
//! deterministic per (config, seed), so the reused run is the run that would
//! be produced again.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{bits, jitter, model_fd_check, synthetic_batch, tiny_config};
use hipdream_autodiff::{finite_diff_check, finite_diff_check_params, ParamStore, Tape, Tensor, Var};
use hipdream_core::harness::load_checkpoint;
use hipdream_core::{
    actor_loss, critic_loss, evaluate, imagine_rollout, lambda_returns, lambda_returns_tape,
    run_episode, train, ActionMode, Agent, ImagineOptions, LatentMode, LossComponents,
    LossOptions, OutputDir, Policy, RssmValue, TrainConfig, Variant, WorldModel,
};
use hipdream_envs::{reward, sorting_goal, Body, Env, EnvConfig, Task};
use hipdream_nn::{
    kl_categorical, kl_categorical_value, CategoricalLatentDist, GruCell, Init, LstmCell, Mlp,
    Scheme, SquashedGaussianDist, UnitGaussianHead,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_TOL: f64 = 1e-4;
const FD_TOL_STOCHASTIC: f64 = 1e-3;
const KL_TOL: f64 = 1e-10;
const LAMBDA_TOL: f64 = 1e-12;
const REWARD_TOL: f64 = 1e-12;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Option<Verdict> {
    Some(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, t.shape(y), -1.0, 1.0);
    let w = t.constant(w);
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

/// Every differentiable tape operation applied to a `[2, 3]` input.
const PRIMITIVES: [&str; 24] = [
    "add", "sub", "mul", "matmul", "concat", "slice", "sum", "mean", "sum_axis", "tanh",
    "sigmoid", "elu", "softplus", "exp", "log", "square", "scale", "neg", "add_scalar",
    "clamp_min", "softmax", "broadcast", "reshape", "param",
];

fn primitive(t: &mut Tape, name: &str, x: Var, other: &Tensor) -> Var {
    let o = t.constant(other.clone());
    match name {
        "add" => t.add(x, o).unwrap(),
        "sub" => t.sub(o, x).unwrap(),
        "mul" => t.mul(x, x).unwrap(),
        "matmul" => {
            let w = t.constant(other.reshape(&[3, 2]).unwrap());
            let a = t.matmul(x, w).unwrap();
            t.matmul(a, x).unwrap()
        }
        "concat" => {
            let c = t.concat(&[x, o, x], 1).unwrap();
            t.concat(&[c, c], 0).unwrap()
        }
        "slice" => t.slice(x, 1, 1, 3).unwrap(),
        "sum" => t.sum(x),
        "mean" => t.mean(x),
        "sum_axis" => t.sum_axis(x, 0).unwrap(),
        "tanh" => t.tanh(x),
        "sigmoid" => t.sigmoid(x),
        "elu" => t.elu(x),
        "softplus" => t.softplus(x),
        "exp" => t.exp(x),
        "log" => {
            let sq = t.square(x);
            let pos = t.add_scalar(sq, 0.5);
            t.log(pos)
        }
        "square" => t.square(x),
        "scale" => t.scale(x, -1.7),
        "neg" => t.neg(x),
        "add_scalar" => t.add_scalar(x, 0.3),
        "clamp_min" => t.clamp_min(x, 0.0),
        "softmax" => t.softmax(x).unwrap(),
        "broadcast" => {
            let r = t.slice(x, 0, 0, 1).unwrap();
            t.broadcast(r, &[4, 3]).unwrap()
        }
        "reshape" => t.reshape(x, &[3, 2]).unwrap(),
        // A parameter leaf feeding a product with the input.
        "param" => {
            let mut store = ParamStore::new();
            let id = store.add("p", other.clone()).unwrap();
            let p = t.param(&store, id);
            t.mul(p, x).unwrap()
        }
        _ => unreachable!("unknown primitive {name}"),
    }
}

fn network_blocks_worst(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;

    let mut store = ParamStore::new();
    let gru = GruCell::new(&mut store, &Init::new(seed), "gru", 3, 4).unwrap();
    jitter(&mut store, seed, 0.3);
    let h0 = random(&mut rng, &[2, 4], -1.0, 1.0);
    let xs: Vec<_> = (0..3).map(|_| random(&mut rng, &[2, 3], -1.0, 1.0)).collect();
    let e = finite_diff_check_params(
        &mut store,
        |t, s| {
            let mut h = t.constant(h0.clone());
            for x in &xs {
                let x = t.constant(x.clone());
                h = gru.step(t, s, h, x)?;
            }
            Ok(weighted_sum(t, h, seed))
        },
        1e-5,
    )
    .unwrap();
    worst = worst.max(e);

    let mut store = ParamStore::new();
    let lstm = LstmCell::new(&mut store, &Init::new(seed), "lstm", 3, 4).unwrap();
    jitter(&mut store, seed + 1, 0.3);
    let c0 = random(&mut rng, &[2, 4], -1.0, 1.0);
    let e = finite_diff_check_params(
        &mut store,
        |t, s| {
            let mut hc = (t.constant(h0.clone()), t.constant(c0.clone()));
            for x in &xs {
                let x = t.constant(x.clone());
                hc = lstm.step(t, s, hc, x)?;
            }
            let both = t.concat(&[hc.0, hc.1], 1)?;
            Ok(weighted_sum(t, both, seed))
        },
        1e-5,
    )
    .unwrap();
    worst = worst.max(e);

    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        &Init::new(seed),
        "mlp",
        &[("a", 3), ("b", 2)],
        &[5, 5],
        4,
        Scheme::Glorot(1.0),
    )
    .unwrap();
    jitter(&mut store, seed + 2, 0.3);
    let a = random(&mut rng, &[3, 3], -1.0, 1.0);
    let b = random(&mut rng, &[3, 2], -1.0, 1.0);
    let y = random(&mut rng, &[3, 4], -1.0, 1.0);
    let noise = random(&mut rng, &[3, 2], -1.0, 1.0);
    let e = finite_diff_check_params(
        &mut store,
        |t, s| {
            let a = t.constant(a.clone());
            let b = t.constant(b.clone());
            let out = mlp.forward(t, s, &[a, b])?;
            let y = t.constant(y.clone());
            let nll = UnitGaussianHead::new(out).nll(t, y)?;
            let dist = SquashedGaussianDist::from_raw(t, out, 2, -5.0, 2.0)?;
            let (act, lp) = dist.rsample(t, &noise)?;
            let s1 = t.sum(nll);
            let s2 = t.sum(lp);
            let s3 = weighted_sum(t, act, seed);
            let s = t.add(s1, s2)?;
            t.add(s, s3)
        },
        1e-5,
    )
    .unwrap();
    worst = worst.max(e);

    let q = random(&mut rng, &[2, 6], -1.5, 1.5);
    let p = random(&mut rng, &[2, 6], -1.5, 1.5);
    let e = finite_diff_check(
        |t, x| {
            let qv = t.constant(q.clone());
            let pd = CategoricalLatentDist::new(t, x, 2, 3)?;
            let qd = CategoricalLatentDist::new(t, qv, 2, 3)?;
            let kl = kl_categorical(t, &pd, &qd)?;
            Ok(t.sum(kl))
        },
        &p,
        1e-5,
    )
    .unwrap();
    worst.max(e)
}

fn tiny_agent(variant: Variant) -> (TrainConfig, Agent) {
    let cfg = tiny_config(Task::Pointmass, variant);
    let mut agent = Agent::new(&cfg).unwrap();
    jitter(&mut agent.world.params, 1, 0.3);
    jitter(&mut agent.actor.params, 2, 0.3);
    jitter(&mut agent.critic.params, 3, 0.3);
    agent.target = agent.critic.params.clone();
    jitter(&mut agent.target, 4, 0.3);
    (cfg, agent)
}

fn start_state(cfg: &TrainConfig) -> RssmValue {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let stoch = cfg.latent_groups * cfg.latent_classes;
    RssmValue {
        h: random(&mut rng, &[cfg.batch_size, cfg.deter_size], -1.0, 1.0),
        z: random(&mut rng, &[cfg.batch_size, stoch], 0.0, 1.0),
        logits: Tensor::zeros(&[cfg.batch_size, stoch]),
    }
}

fn criterion_1() -> Option<Verdict> {
    let clock = Instant::now();
    let mut prim_worst = 0.0f64;
    for (i, name) in PRIMITIVES.iter().enumerate() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * i as u64 + seed);
            // Keep inputs away from the ELU and clamp kinks at zero.
            let x = random(&mut rng, &[2, 3], -2.0, 2.0).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
            let other = random(&mut rng, &[2, 3], -2.0, 2.0);
            let err = finite_diff_check(
                |t, v| {
                    let y = primitive(t, name, v, &other);
                    Ok(weighted_sum(t, y, seed))
                },
                &x,
                1e-5,
            )
            .unwrap();
            prim_worst = prim_worst.max(err);
        }
    }
    let block_worst = (0..5).map(network_blocks_worst).fold(0.0, f64::max);

    let mut wm_worst = 0.0f64;
    for variant in Variant::ALL {
        let cfg = tiny_config(Task::Pointmass, variant);
        let mut wm = WorldModel::from_config(&cfg).unwrap();
        jitter(&mut wm.params, 5, 0.2);
        let batch = synthetic_batch(&cfg, 1);
        let opts = LossOptions {
            latent: LatentMode::Expected,
            balanced: false,
            ..LossOptions::from_config(&cfg)
        };
        let err = model_fd_check(
            &mut wm,
            |m| &mut m.params,
            |m, tape| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                m.loss(tape, &batch, &opts, &mut rng).unwrap().terms.total
            },
            1e-5,
        );
        wm_worst = wm_worst.max(err);
    }

    let mut actor_worst = 0.0f64;
    let mut critic_worst = 0.0f64;
    for variant in Variant::ALL {
        let (cfg, agent) = tiny_agent(variant);
        let start = start_state(&cfg);
        let opts = ImagineOptions {
            horizon: cfg.horizon,
            latent: LatentMode::Expected,
            action: ActionMode::Sample,
        };
        let roll = |tape: &mut Tape, actor: &hipdream_core::Actor| {
            tape.freeze(&agent.world.params);
            tape.freeze(&agent.target);
            let s = start.constant(tape);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let traj = imagine_rollout(
                tape,
                &agent.world,
                actor,
                &agent.critic,
                &agent.target,
                s,
                &opts,
                &mut rng,
            )
            .unwrap();
            let ret =
                lambda_returns_tape(tape, &traj.rewards, &traj.values, cfg.gamma, cfg.lambda)
                    .unwrap();
            (traj, ret)
        };
        let mut actor = agent.actor.clone();
        let err = model_fd_check(
            &mut actor,
            |a| &mut a.params,
            |a, tape| {
                let (traj, ret) = roll(tape, a);
                actor_loss(tape, &traj, &ret, 0.05).unwrap()
            },
            1e-6,
        );
        actor_worst = actor_worst.max(err);
        let mut critic = agent.critic.clone();
        let err = model_fd_check(
            &mut critic,
            |c| &mut c.params,
            |c, tape| {
                let (traj, ret) = roll(tape, &agent.actor);
                critic_loss(tape, c, &traj, &ret).unwrap()
            },
            1e-5,
        );
        critic_worst = critic_worst.max(err);
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = prim_worst < FD_TOL
        && block_worst < FD_TOL
        && wm_worst < FD_TOL
        && critic_worst < FD_TOL
        && actor_worst < FD_TOL_STOCHASTIC
        && secs < 120.0;
    verdict(
        pass,
        format!(
            "worst relative error: {} primitives {prim_worst:.1e}, blocks {block_worst:.1e}, \
             world-model loss {wm_worst:.1e}, critic loss {critic_worst:.1e} (tol {FD_TOL:.0e}); \
             actor loss {actor_worst:.1e} (tol {FD_TOL_STOCHASTIC:.0e}); {secs:.1}s (limit 120s)",
            PRIMITIVES.len()
        ),
    )
}

/// n-step returns mixed with explicit λ weights; no backward recursion.
fn lambda_oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = values.len();
    (0..h.saturating_sub(1))
        .map(|t| {
            let steps = h - 1 - t;
            let n_step = |n: usize| {
                let mut g = 0.0;
                for k in 0..n {
                    g += gamma.powi(k as i32) * rewards[t + k];
                }
                g + gamma.powi(n as i32) * values[t + n]
            };
            let mut total = 0.0;
            for n in 1..steps {
                total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            total + lambda.powi(steps as i32 - 1) * n_step(steps)
        })
        .collect()
}

fn criterion_2() -> Option<Verdict> {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut kl_worst = 0.0f64;
    for _ in 0..1000 {
        let (groups, classes) = (rng.random_range(1..5), rng.random_range(2..7));
        let n = groups * classes;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut t = Tape::new();
        let pv = t.constant(Tensor::new(&[1, n], p.clone()).unwrap());
        let qv = t.constant(Tensor::new(&[1, n], q.clone()).unwrap());
        let pd = CategoricalLatentDist::new(&t, pv, groups, classes).unwrap();
        let qd = CategoricalLatentDist::new(&t, qv, groups, classes).unwrap();
        let kl = kl_categorical(&mut t, &pd, &qd).unwrap();
        kl_worst = kl_worst.max((t.item(kl) - kl_categorical_value(&p, &q, classes)).abs());
    }

    let mut lambda_worst = 0.0f64;
    for _ in 0..1000 {
        let h = rng.random_range(1..=20);
        let gamma = rng.random_range(0.0..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let r: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..h).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = lambda_returns(&r, &v, gamma, lambda);
        let b = lambda_oracle(&r, &v, gamma, lambda);
        if a.len() != b.len() {
            return verdict(false, "λ-return length mismatch");
        }
        for (x, y) in a.iter().zip(&b) {
            lambda_worst = lambda_worst.max((x - y).abs());
        }
    }

    let mut st_worst = 0.0f64;
    for _ in 0..100 {
        let logits = random(&mut rng, &[3, 8], -3.0, 3.0);
        let w = random(&mut rng, &[3, 8], -1.0, 1.0);
        let mut t = Tape::new();
        let l = t.var(logits.clone());
        let d = CategoricalLatentDist::new(&t, l, 2, 4).unwrap();
        let z = d.sample_straight_through(&mut t, &mut rng).unwrap();
        let wv = t.constant(w.clone());
        let y = t.mul(z, wv).unwrap();
        let y = t.sum(y);
        let g = t.backward(y).unwrap().wrt(&t, l);
        for (chunk, (lg, ww)) in g
            .data()
            .chunks(4)
            .zip(logits.data().chunks(4).zip(w.data().chunks(4)))
        {
            let m = lg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = lg.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            let dot: f64 = p.iter().zip(ww).map(|(a, b)| a * b).sum();
            for j in 0..4 {
                st_worst = st_worst.max((chunk[j] - p[j] * (ww[j] - dot)).abs());
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = kl_worst <= KL_TOL && lambda_worst <= LAMBDA_TOL && st_worst <= 1e-12 && secs < 60.0;
    verdict(
        pass,
        format!(
            "KL vs direct sum {kl_worst:.1e} (tol {KL_TOL:.0e}); λ-returns vs oracle \
             {lambda_worst:.1e} over 1000 cases (tol {LAMBDA_TOL:.0e}); straight-through vs \
             softmax gradient {st_worst:.1e}; {secs:.1}s (limit 60s)"
        ),
    )
}

fn criterion_3() -> Option<Verdict> {
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());

    let sorting = EnvConfig::new(Task::Sorting);
    check(sorting_goal(&sorting, 0.5), 0.2);
    check(sorting_goal(&sorting, 0.6), -0.2);
    let mut env = Env::new(sorting.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (omega, goal) in [(0.5, 0.2), (0.6, -0.2)] {
        env.reset(&mut rng, Some(&[omega])).unwrap();
        check(sorting_goal(&sorting, env.state().unwrap().omega.omega[0]), goal);
    }
    check(reward(&sorting, &Body::Sorting { x: -0.2, x_dot: 0.0 }, &[0.2]), (-0.4f64).exp());
    for omega in [0.3, 0.9] {
        let body = Body::Sorting {
            x: sorting_goal(&sorting, omega),
            x_dot: 0.0,
        };
        check(reward(&sorting, &body, &[omega]), 1.0);
    }
    for x in [-1.0, -0.35, 0.0, 0.1, 0.7] {
        let body = Body::Sorting { x, x_dot: 0.3 };
        check(reward(&sorting, &body, &[0.4]), (-(x - 0.2f64).abs()).exp());
        check(reward(&sorting, &body, &[0.8]), (-(x + 0.2f64).abs()).exp());
    }

    let throwing = EnvConfig::new(Task::Throwing);
    let gx = throwing.throwing.goal_x;
    for dx in [0.0, 0.25, -1.5] {
        let body = Body::Throwing {
            arm: 0.0,
            arm_dot: 0.0,
            ball: [gx + dx, 0.0, 0.0, 0.0],
            released: true,
            landed: true,
        };
        check(reward(&throwing, &body, &[0.5]), (-dx.abs()).exp());
    }

    let pm = EnvConfig::new(Task::Pointmass);
    let g = pm.pointmass.goal;
    let unit = Body::Pointmass {
        pos: [g[0] + 1.0, g[1]],
        vel: [0.0, 0.0],
    };
    check(reward(&pm, &unit, &[1.0, 1.0]), (-1.0f64).exp());
    check(reward(&pm, &unit, &[1.6, 1.6]), 1.0 - (-1.0f64).exp());
    let at_goal = Body::Pointmass { pos: g, vel: [0.0, 0.0] };
    check(reward(&pm, &at_goal, &[2.0, 2.0]), 0.0);
    check(reward(&pm, &at_goal, &[1.0, 1.0]), 1.0);

    verdict(
        worst <= REWARD_TOL,
        format!("worst deviation from closed form {worst:.1e} (tol {REWARD_TOL:.0e})"),
    )
}

fn names(store: &ParamStore) -> std::collections::BTreeSet<String> {
    store.names().map(str::to_string).collect()
}

fn agent_names(a: &Agent) -> std::collections::BTreeSet<String> {
    let mut all = names(&a.world.params);
    all.extend(names(&a.actor.params));
    all.extend(names(&a.critic.params));
    all
}

fn zero_param(store: &mut ParamStore, name: &str) {
    let id = store.id(name).unwrap();
    let shape = store.value(id).shape().to_vec();
    *store.value_mut(id) = Tensor::zeros(&shape);
}

/// Bits of every forward quantity the agent produces on a fixed input.
fn forward_fingerprint(agent: &Agent, cfg: &TrainConfig) -> Vec<u64> {
    let mut out = Vec::new();
    let batch = synthetic_batch(cfg, 5);
    let mut tape = Tape::new();
    let loss = agent
        .world
        .loss(&mut tape, &batch, &LossOptions::from_config(cfg), &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    let c = LossComponents::read(&tape, &loss.terms);
    out.extend([c.recon.to_bits(), c.reward.to_bits(), c.kl.to_bits()]);
    let post = RssmValue::read(&tape, &loss.posterior);
    out.extend(bits(&post.h));
    out.extend(bits(&post.z));
    out.extend(bits(&post.logits));

    let mut tape = Tape::new();
    tape.freeze(&agent.world.params);
    tape.freeze(&agent.target);
    let s = start_state(cfg).constant(&mut tape);
    let opts = ImagineOptions {
        horizon: cfg.horizon,
        latent: LatentMode::Sample,
        action: ActionMode::Sample,
    };
    let traj = imagine_rollout(
        &mut tape,
        &agent.world,
        &agent.actor,
        &agent.critic,
        &agent.target,
        s,
        &opts,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    for t in 0..traj.horizon() {
        for v in [traj.actions[t], traj.rewards[t], traj.values[t], traj.log_probs[t]] {
            out.extend(bits(tape.value(v)));
        }
    }

    let mut env = Env::new(hipdream_core::env_config(cfg)).unwrap();
    let rec = run_episode(
        &mut env,
        Policy::Agent { agent, explore: true },
        Some(&[1.3, 1.1]),
        &mut ChaCha8Rng::seed_from_u64(5),
        &mut ChaCha8Rng::seed_from_u64(6),
    )
    .unwrap();
    for a in rec.actions.iter().flatten() {
        out.push(a.to_bits());
    }
    out
}

fn criterion_4() -> Option<Verdict> {
    let mut problems = Vec::new();

    // Forward equivalence: the full model with every new component switched
    // off (zero omega weights into the posterior, actor and critic) against
    // plain dreamer built from the same seed.
    let cfg_d = tiny_config(Task::Pointmass, Variant::Dreamer);
    let cfg_p = tiny_config(Task::Pointmass, Variant::Privileged);
    let dreamer = Agent::new(&cfg_d).unwrap();
    let mut full = Agent::new(&cfg_p).unwrap();
    // Non-zero estimator and head outputs, so only the switched-off inputs
    // separate the two models.
    let ids: Vec<_> = full
        .world
        .params
        .ids()
        .filter(|id| {
            let n = full.world.params.name(*id);
            n.starts_with("estimator.") || n.starts_with("omega_head.")
        })
        .collect();
    for id in ids {
        for v in full.world.params.value_mut(id).data_mut() {
            *v += 0.3;
        }
    }
    zero_param(&mut full.world.params, "posterior.l0.w.omega");
    zero_param(&mut full.actor.params, "actor.l0.w.omega");
    zero_param(&mut full.critic.params, "critic.l0.w.omega");
    zero_param(&mut full.target, "critic.l0.w.omega");
    let a = forward_fingerprint(&dreamer, &cfg_d);
    let b = forward_fingerprint(&full, &cfg_p);
    let equal = a == b;
    if !equal {
        problems.push("dreamer forward pass differs from the disabled full model".to_string());
    }

    // Parameter-set diffs along the ladder.
    let expected: [(Variant, Variant, Vec<&str>); 3] = [
        (Variant::Dreamer, Variant::Decoder, vec!["omega_head."]),
        (
            Variant::Decoder,
            Variant::DecoderCond,
            vec!["actor.l0.w.omega", "critic.l0.w.omega"],
        ),
        (
            Variant::DecoderCond,
            Variant::Privileged,
            vec!["estimator.", "posterior.l0.w.omega"],
        ),
    ];
    let mut diffs = Vec::new();
    for (lo, hi, additions) in expected {
        let a = agent_names(&Agent::new(&tiny_config(Task::Pointmass, lo)).unwrap());
        let b = agent_names(&Agent::new(&tiny_config(Task::Pointmass, hi)).unwrap());
        let removed: Vec<_> = a.difference(&b).collect();
        let added: Vec<&String> = b.difference(&a).collect();
        let covered = added
            .iter()
            .all(|n| additions.iter().any(|p| n.as_str() == *p || (p.ends_with('.') && n.starts_with(p))));
        let complete = additions
            .iter()
            .all(|p| added.iter().any(|n| n.as_str() == *p || (p.ends_with('.') && n.starts_with(p))));
        if !removed.is_empty() || !covered || !complete {
            problems.push(format!("{lo}→{hi}: added {added:?}, removed {removed:?}"));
        }
        diffs.push(format!("{lo}→{hi} +{}", added.len()));
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "dreamer bit-equal to disabled full model over {} forward values; diffs {}",
                a.len(),
                diffs.join(", ")
            )
        } else {
            problems.join("; ")
        },
    )
}

fn criterion_8() -> Option<Verdict> {
    let mut cfg = common::small_config(Task::Sorting, Variant::Privileged);
    cfg.steps = 1000;
    let dir = tempfile::tempdir().unwrap();
    let a = OutputDir::new(dir.path().join("a")).unwrap();
    let b = OutputDir::new(dir.path().join("b")).unwrap();
    let run = train(&cfg, Some(&a)).unwrap();
    train(&cfg, Some(&b)).unwrap();
    let same_csv = std::fs::read(a.metrics()).unwrap() == std::fs::read(b.metrics()).unwrap();
    let restored = load_checkpoint(&a.final_checkpoint(), Some(&cfg)).unwrap();
    let before = evaluate(&run.agent, 5, 17, None).unwrap();
    let after = evaluate(&restored.agent, 5, 17, None).unwrap();
    let same_eval = before.returns.iter().map(|x| x.to_bits()).eq(after.returns.iter().map(|x| x.to_bits()))
        && before.omega_mse.map(f64::to_bits) == after.omega_mse.map(f64::to_bits);
    verdict(
        same_csv && same_eval,
        format!(
            "metrics CSVs byte-identical: {same_csv}; evaluate() after save/load identical: \
             {same_eval} (mean {})",
            after.mean
        ),
    )
}

// ---------------------------------------------------------------------------
// Training criteria.

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_STEPS: usize = 100_000;
const TEST_EPISODES: usize = 50;
/// Seed of the held-out test episodes, shared by every run.
const TEST_SEED: u64 = 4_000_037;

fn desk_config(task: Task, variant: Variant, seed: u64) -> TrainConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut cfg = TrainConfig::new(task, variant);
    cfg.apply_text(&text).unwrap();
    cfg.seed = seed;
    cfg.steps = TRAIN_STEPS;
    cfg.record_wall_time = false;
    cfg.validate().unwrap();
    cfg
}

struct Run {
    cfg: TrainConfig,
    agent: Agent,
    metrics: hipdream_core::MetricsLog,
    secs: f64,
}

fn runs_root() -> PathBuf {
    std::env::var_os("HIPDREAM_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-runs"))
}

fn obtain_run(task: Task, variant: Variant, seed: u64) -> Run {
    let cfg = desk_config(task, variant, seed);
    let out = OutputDir::new(runs_root().join(format!("{}-{}-seed{seed}", task.name(), variant.name())))
        .unwrap();
    let timing = out.dir.join("train_seconds.txt");
    let reusable = std::fs::read_to_string(out.config()).ok().as_deref() == Some(cfg.to_text().as_str())
        && out.final_checkpoint().is_file()
        && timing.is_file();
    if reusable {
        let ck = load_checkpoint(&out.final_checkpoint(), Some(&cfg)).unwrap();
        eprintln!("reusing {}", out.dir.display());
        return Run {
            metrics: hipdream_core::MetricsLog::read(&out.metrics()).unwrap(),
            secs: std::fs::read_to_string(&timing).unwrap().trim().parse().unwrap(),
            agent: ck.agent,
            cfg,
        };
    }
    eprintln!("training {}", out.dir.display());
    let clock = Instant::now();
    let outcome = train(&cfg, Some(&out)).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    std::fs::write(&timing, format!("{secs:.1}\n")).unwrap();
    Run {
        cfg,
        agent: outcome.agent,
        metrics: outcome.metrics,
        secs,
    }
}

struct Runs {
    runs: Vec<(Task, Variant, Run)>,
}

impl Runs {
    fn get(&self, task: Task, variant: Variant) -> Vec<&Run> {
        self.runs
            .iter()
            .filter(|(t, v, _)| *t == task && *v == variant)
            .map(|(_, _, r)| r)
            .collect()
    }
}

fn train_all() -> Runs {
    let plan = [
        (Task::Pendulum, Variant::Privileged),
        (Task::Pendulum, Variant::Decoder),
        (Task::Sorting, Variant::Privileged),
        (Task::Sorting, Variant::Decoder),
        (Task::Sorting, Variant::Dreamer),
        (Task::Pointmass, Variant::Privileged),
        (Task::Pointmass, Variant::Dreamer),
    ];
    let mut runs = Vec::new();
    for (task, variant) in plan {
        for seed in SEEDS {
            runs.push((task, variant, obtain_run(task, variant, seed)));
        }
    }
    Runs { runs }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_5(runs: &Runs) -> Option<Verdict> {
    const STEP: usize = 50;
    let mut fractions = Vec::new();
    let mut est_fractions = Vec::new();
    let mut worst_secs = 0.0f64;
    for run in runs.get(Task::Pendulum, Variant::Privileged) {
        worst_secs = worst_secs.max(run.secs);
        let mut env = Env::new(hipdream_core::env_config(&run.cfg)).unwrap();
        let (mut hits, mut est_hits) = (0, 0);
        for ep in 0..TEST_EPISODES as u64 {
            let rec = run_episode(
                &mut env,
                Policy::Agent {
                    agent: &run.agent,
                    explore: false,
                },
                None,
                &mut ChaCha8Rng::seed_from_u64(TEST_SEED + ep),
                &mut ChaCha8Rng::seed_from_u64(TEST_SEED + 1_000_000 + ep),
            )
            .unwrap();
            let truth = rec.episode.omega[0];
            let rel = |v: &Option<Vec<f64>>| (v.as_ref().unwrap()[0] - truth).abs() / truth.abs();
            hits += usize::from(rel(&rec.omega_pred[STEP]) < 0.1);
            est_hits += usize::from(rel(&rec.omega_est[STEP]) < 0.1);
        }
        fractions.push(hits as f64 / TEST_EPISODES as f64);
        est_fractions.push(est_hits as f64 / TEST_EPISODES as f64);
    }
    let pass = fractions.iter().all(|f| *f >= 0.8) && worst_secs <= 3600.0;
    verdict(
        pass,
        format!(
            "fraction of {TEST_EPISODES} test episodes with |ω̂-ω|/ω < 0.1 after {STEP} steps, per \
             seed: {fractions:?} (need ≥ 0.8 each; estimator output: {est_fractions:?}); \
             slowest seed {worst_secs:.0}s (limit 3600s)"
        ),
    )
}

/// Mean-squared error of the omega head over the test episodes.
fn test_omega_mse(agent: &Agent) -> f64 {
    evaluate(agent, TEST_EPISODES, TEST_SEED, None)
        .unwrap()
        .omega_mse
        .unwrap()
}

fn criterion_6(runs: &Runs) -> Option<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for task in [Task::Pendulum, Task::Sorting] {
        let mut finals = Vec::new();
        for variant in [Variant::Privileged, Variant::Decoder] {
            let rs = runs.get(task, variant);
            let start: Vec<f64> = rs.iter().map(|r| test_omega_mse(&Agent::new(&r.cfg).unwrap())).collect();
            let end: Vec<f64> = rs.iter().map(|r| test_omega_mse(&r.agent)).collect();
            let (s, e) = (mean(&start), mean(&end));
            pass &= e <= s / 5.0;
            parts.push(format!("{} {variant}: {s:.4} → {e:.4} (ratio {:.3})", task.name(), e / s));
            finals.push(e);
        }
        pass &= finals[0] < finals[1];
    }
    verdict(
        pass,
        format!(
            "3-seed mean ω MSE, step 0 → final: {} (need ratio ≤ 0.2 and privileged < decoder)",
            parts.join("; ")
        ),
    )
}

fn criterion_7(runs: &Runs) -> Option<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut secs = 0.0;
    for task in [Task::Sorting, Task::Pointmass] {
        let mut means = Vec::new();
        for variant in [Variant::Privileged, Variant::Dreamer] {
            let rs = runs.get(task, variant);
            secs += rs.iter().map(|r| r.secs).sum::<f64>();
            let returns: Vec<f64> = rs
                .iter()
                .map(|r| evaluate(&r.agent, TEST_EPISODES, TEST_SEED, None).unwrap().mean)
                .collect();
            let logged: Vec<f64> = rs.iter().map(|r| r.metrics.last().unwrap().eval_mean).collect();
            means.push(mean(&returns));
            parts.push(format!(
                "{} {variant} {:.2} (seeds {returns:.1?}; last logged eval {:.2})",
                task.name(),
                mean(&returns),
                mean(&logged)
            ));
        }
        pass &= means[0] > means[1];
    }
    pass &= secs <= 6.0 * 3600.0;
    verdict(
        pass,
        format!(
            "3-seed mean return over {TEST_EPISODES} test episodes: {}; training {:.2} CPU-hours \
             (limit ~6)",
            parts.join("; "),
            secs / 3600.0
        ),
    )
}

fn main() {
    let full = std::env::args().any(|a| a == "--full")
        || std::env::var("HIPDREAM_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    // Honor libtest's listing protocol so `cargo test -- --list` works.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let titles = [
        "gradient correctness",
        "oracle equivalence",
        "reward fidelity",
        "ablation-ladder structure",
        "online estimation",
        "omega reconstruction learning",
        "parameterized-reward ordering",
        "determinism and round-trip",
    ];
    let runs = full.then(train_all);
    let mut failed = 0;
    for (i, title) in titles.iter().enumerate() {
        let n = i + 1;
        let v = match (n, &runs) {
            (1, _) => criterion_1(),
            (2, _) => criterion_2(),
            (3, _) => criterion_3(),
            (4, _) => criterion_4(),
            (5, Some(r)) => criterion_5(r),
            (6, Some(r)) => criterion_6(r),
            (7, Some(r)) => criterion_7(r),
            (8, _) => criterion_8(),
            _ => None,
        };
        match v {
            Some(v) => {
                failed += usize::from(!v.pass);
                println!(
                    "criterion {n} [{title}]: {} — {}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.detail
                );
            }
            None => println!(
                "criterion {n} [{title}]: SKIPPED — needs 21 training runs of {TRAIN_STEPS} steps; \
                 run with `-- --full`"
            ),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
