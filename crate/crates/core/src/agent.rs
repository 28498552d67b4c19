//! Actor-critic trained on imagined rollouts of a frozen world model.

use hipdream_autodiff::{GradMode, ParamStore, Tape, Tensor, Var};
use hipdream_nn::{AdamConfig, AdamState, Init, Mlp, Scheme, SquashedGaussianDist, StepOutcome};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::world_model::{
    EpisodeBatch, EstimatorValue, LatentMode, LossComponents, LossOptions, ModelDims, RssmState,
    RssmValue, WorldModel,
};

/// Inputs shared by the actor and critic.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput {
    pub h: Var,
    pub z: Var,
    /// Real observation during interaction, decoded observation in imagination.
    pub x: Var,
    /// Predicted omega; present only for variants that condition the policy.
    pub omega: Option<Var>,
}

impl PolicyInput {
    fn vars(&self, conditioned: bool) -> Result<Vec<Var>> {
        let mut v = vec![self.h, self.z, self.x];
        match (conditioned, self.omega) {
            (true, Some(w)) => v.push(w),
            (false, _) => {}
            (true, None) => {
                return Err(CoreError::Config(
                    "conditioned policy needs a predicted omega".into(),
                ))
            }
        }
        Ok(v)
    }

    /// Same inputs cut off from the gradient flow.
    pub fn detach(&self, tape: &mut Tape) -> Self {
        Self {
            h: tape.detach(self.h),
            z: tape.detach(self.z),
            x: tape.detach(self.x),
            omega: self.omega.map(|w| tape.detach(w)),
        }
    }
}

fn policy_net(
    store: &mut ParamStore,
    init: &Init,
    name: &str,
    dims: &ModelDims,
    conditioned: bool,
    out: usize,
) -> Result<Mlp> {
    let extras: &[(&str, usize)] = if conditioned {
        &[("omega", dims.omega)]
    } else {
        &[]
    };
    Ok(Mlp::with_extras(
        store,
        init,
        name,
        &[("h", dims.deter), ("z", dims.stoch()), ("x", dims.obs)],
        extras,
        &vec![dims.hidden; dims.mlp_layers],
        out,
        Scheme::Glorot(1.0),
    )?)
}

/// `π(a | h, z, x, ω̂)`: squashed Gaussian over actions.
#[derive(Debug, Clone)]
pub struct Actor {
    pub params: ParamStore,
    net: Mlp,
    action_dim: usize,
    conditioned: bool,
    min_log_std: f64,
    max_log_std: f64,
}

impl Actor {
    pub fn new(
        dims: &ModelDims,
        conditioned: bool,
        seed: u64,
        min_log_std: f64,
        max_log_std: f64,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = policy_net(
            &mut params,
            &Init::new(seed),
            "actor",
            dims,
            conditioned,
            2 * dims.action,
        )?;
        Ok(Self {
            params,
            net,
            action_dim: dims.action,
            conditioned,
            min_log_std,
            max_log_std,
        })
    }

    pub fn conditioned(&self) -> bool {
        self.conditioned
    }

    pub fn dist(&self, tape: &mut Tape, input: &PolicyInput) -> Result<SquashedGaussianDist> {
        let raw = self
            .net
            .forward(tape, &self.params, &input.vars(self.conditioned)?)?;
        Ok(SquashedGaussianDist::from_raw(
            tape,
            raw,
            self.action_dim,
            self.min_log_std,
            self.max_log_std,
        )?)
    }
}

/// `v(h, z, x, ω̂)`. The network can be evaluated with any store of the
/// same layout, which is how the target copy is used.
#[derive(Debug, Clone)]
pub struct Critic {
    pub params: ParamStore,
    net: Mlp,
    conditioned: bool,
}

impl Critic {
    pub fn new(dims: &ModelDims, conditioned: bool, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = policy_net(&mut params, &Init::new(seed), "critic", dims, conditioned, 1)?;
        Ok(Self {
            params,
            net,
            conditioned,
        })
    }

    /// Value `[N, 1]` under the parameters in `store`.
    pub fn value_with(&self, tape: &mut Tape, store: &ParamStore, input: &PolicyInput) -> Result<Var> {
        Ok(self
            .net
            .forward(tape, store, &input.vars(self.conditioned)?)?)
    }

    pub fn value(&self, tape: &mut Tape, input: &PolicyInput) -> Result<Var> {
        self.value_with(tape, &self.params, input)
    }
}

/// How imagined actions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Reparameterized sample with standard-normal noise from the rng.
    Sample,
    /// `tanh(mean)`; log-probabilities are still evaluated at zero noise.
    Mode,
}

/// Rollout options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImagineOptions {
    pub horizon: usize,
    pub latent: LatentMode,
    pub action: ActionMode,
}

/// `H` imagined transitions. Index `t` holds the state the action was taken
/// in, the action, and the reward predicted for the resulting state.
#[derive(Debug, Clone)]
pub struct ImaginedTrajectory {
    pub states: Vec<RssmState>,
    pub inputs: Vec<PolicyInput>,
    pub actions: Vec<Var>,
    /// `[N]` log-density of each action.
    pub log_probs: Vec<Var>,
    /// `[N, 1]` single-sample entropy estimate `-log π(a_t)`.
    pub entropy: Vec<Var>,
    /// `[N, 1]`
    pub rewards: Vec<Var>,
    /// `[N, 1]` target-critic value of `states[t]`.
    pub values: Vec<Var>,
    /// State after the last transition.
    pub last: RssmState,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Policy inputs at an imagined state: decoded observation and, when the
/// policy is conditioned, the predicted omega.
pub fn imagined_input(
    tape: &mut Tape,
    world: &WorldModel,
    conditioned: bool,
    s: &RssmState,
) -> Result<PolicyInput> {
    let heads = world.predict_heads(tape, s)?;
    Ok(PolicyInput {
        h: s.h,
        z: s.z,
        x: heads.obs,
        omega: if conditioned { heads.omega } else { None },
    })
}

fn normal_noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(&[rows, cols], data).expect("rows * cols values")
}

/// Roll the actor through the world model from `seed` for `opts.horizon`
/// steps. The caller decides which stores are frozen on `tape`; for
/// training, the world model and `target` are frozen so gradients reach
/// only the actor.
#[allow(clippy::too_many_arguments)]
pub fn imagine_rollout<R: Rng>(
    tape: &mut Tape,
    world: &WorldModel,
    actor: &Actor,
    critic: &Critic,
    target: &ParamStore,
    seed: RssmState,
    opts: &ImagineOptions,
    rng: &mut R,
) -> Result<ImaginedTrajectory> {
    let n = tape.shape(seed.h)[0];
    let mut traj = ImaginedTrajectory {
        states: Vec::with_capacity(opts.horizon),
        inputs: Vec::with_capacity(opts.horizon),
        actions: Vec::with_capacity(opts.horizon),
        log_probs: Vec::with_capacity(opts.horizon),
        entropy: Vec::with_capacity(opts.horizon),
        rewards: Vec::with_capacity(opts.horizon),
        values: Vec::with_capacity(opts.horizon),
        last: seed,
    };
    let mut state = seed;
    let mut input = imagined_input(tape, world, actor.conditioned(), &state)?;
    for _ in 0..opts.horizon {
        let dist = actor.dist(tape, &input)?;
        let noise = match opts.action {
            ActionMode::Sample => normal_noise(rng, n, world.dims.action),
            ActionMode::Mode => Tensor::zeros(&[n, world.dims.action]),
        };
        let (action, log_prob) = dist.rsample(tape, &noise)?;
        let value = critic.value_with(tape, target, &input)?;
        let next = world.imagine_step(tape, &state, action, opts.latent, rng)?;
        let heads = world.predict_heads(tape, &next)?;
        if !tape.value(next.h).is_finite() || !tape.value(heads.reward).is_finite() {
            log::warn!("imagination produced a non-finite state; rollout aborted");
            return Err(CoreError::NonFinite("imagined state".into()));
        }
        let lp = tape.reshape(log_prob, &[n, 1])?;
        let entropy = tape.neg(lp);

        traj.states.push(state);
        traj.inputs.push(input);
        traj.actions.push(action);
        traj.log_probs.push(log_prob);
        traj.entropy.push(entropy);
        traj.rewards.push(heads.reward);
        traj.values.push(value);

        state = next;
        input = PolicyInput {
            h: next.h,
            z: next.z,
            x: heads.obs,
            omega: if actor.conditioned() { heads.omega } else { None },
        };
    }
    traj.last = state;
    Ok(traj)
}

/// λ-returns over plain numbers: `V_H = v_H` and
/// `V_t = r_t + γ((1-λ) v_{t+1} + λ V_{t+1})`, returning `V_1 .. V_{H-1}`.
pub fn lambda_returns(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = values.len();
    assert!(rewards.len() >= h.saturating_sub(1), "one reward per transition");
    if h == 0 {
        return Vec::new();
    }
    let mut out = vec![0.0; h - 1];
    let mut next = values[h - 1];
    for t in (0..h - 1).rev() {
        next = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * next);
        out[t] = next;
    }
    out
}

/// Tape version of [`lambda_returns`] over `[N, 1]` rows.
pub fn lambda_returns_tape(
    tape: &mut Tape,
    rewards: &[Var],
    values: &[Var],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var>> {
    let h = values.len();
    if h == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(h - 1);
    let mut next = values[h - 1];
    for t in (0..h - 1).rev() {
        let boot = tape.scale(values[t + 1], gamma * (1.0 - lambda));
        let cont = tape.scale(next, gamma * lambda);
        let tail = tape.add(boot, cont)?;
        next = tape.add(rewards[t], tail)?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

/// `mean(-V_t - coef · entropy_t)` over batch and `t = 1 .. H-1`.
pub fn actor_loss(
    tape: &mut Tape,
    traj: &ImaginedTrajectory,
    returns: &[Var],
    entropy_coef: f64,
) -> Result<Var> {
    if returns.is_empty() {
        return Err(CoreError::Config("actor loss needs a horizon of at least 2".into()));
    }
    let mut terms = Vec::with_capacity(returns.len());
    for (t, ret) in returns.iter().enumerate() {
        let bonus = tape.scale(traj.entropy[t], entropy_coef);
        let objective = tape.add(*ret, bonus)?;
        terms.push(tape.neg(objective));
    }
    let all = tape.concat(&terms, 0)?;
    Ok(tape.mean(all))
}

/// `mean(½ (v(sg(s_t)) - sg(V_t))²)` over batch and `t = 1 .. H-1`, using
/// the online critic parameters.
pub fn critic_loss(
    tape: &mut Tape,
    critic: &Critic,
    traj: &ImaginedTrajectory,
    returns: &[Var],
) -> Result<Var> {
    if returns.is_empty() {
        return Err(CoreError::Config("critic loss needs a horizon of at least 2".into()));
    }
    let k = returns.len();
    let detached: Vec<PolicyInput> = traj.inputs[..k].iter().map(|i| i.detach(tape)).collect();
    let cat = |tape: &mut Tape, f: &dyn Fn(&PolicyInput) -> Var| -> Result<Var> {
        let parts: Vec<Var> = detached.iter().map(f).collect();
        Ok(tape.concat(&parts, 0)?)
    };
    let input = PolicyInput {
        h: cat(tape, &|i| i.h)?,
        z: cat(tape, &|i| i.z)?,
        x: cat(tape, &|i| i.x)?,
        omega: match detached[0].omega {
            Some(_) => Some(cat(tape, &|i| i.omega.expect("omega on every step"))?),
            None => None,
        },
    };
    let v = critic.value(tape, &input)?;
    let targets: Vec<Var> = returns.iter().map(|r| tape.detach(*r)).collect();
    let target = tape.concat(&targets, 0)?;
    critic_loss_from(tape, v, target)
}

/// `mean(½ (v - sg(target))²)`.
pub fn critic_loss_from(tape: &mut Tape, v: Var, target: Var) -> Result<Var> {
    let target = tape.detach(target);
    let diff = tape.sub(v, target)?;
    let sq = tape.square(diff);
    let m = tape.mean(sq);
    Ok(tape.scale(m, 0.5))
}

/// Per-episode recurrent state of the acting policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub rssm: RssmValue,
    pub estimator: Option<EstimatorValue>,
    pub prev_action: Vec<f64>,
}

/// One acting step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    /// Estimator output for this step (privileged variant).
    pub omega_est: Option<Vec<f64>>,
    /// Prediction-head output for this step (all variants but dreamer).
    pub omega_pred: Option<Vec<f64>>,
}

/// Losses of one training update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub world: LossComponents,
    pub actor: f64,
    pub critic: f64,
}

/// World model, actor, critic, target critic and their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: TrainConfig,
    pub world: WorldModel,
    pub actor: Actor,
    pub critic: Critic,
    /// Target-critic parameters, refreshed every `target_every` updates.
    pub target: ParamStore,
    pub opt_world: AdamState,
    pub opt_actor: AdamState,
    pub opt_critic: AdamState,
    pub updates: u64,
}

/// Largest `f64` below 1.
const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

fn adam(cfg: &TrainConfig, lr: f64, store: &ParamStore) -> AdamState {
    let mut c = AdamConfig::with_lr(lr);
    c.eps = cfg.adam_eps;
    c.clip = cfg.grad_clip;
    AdamState::new(store, c)
}

impl Agent {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let dims = ModelDims::from_config(config);
        let world = WorldModel::new(dims, config.model, config.seed)?;
        let cond = config.model.conditions_policy();
        let actor = Actor::new(&dims, cond, config.seed, config.min_log_std, config.max_log_std)?;
        let critic = Critic::new(&dims, cond, config.seed)?;
        let target = critic.params.clone();
        Ok(Self {
            opt_world: adam(config, config.model_lr, &world.params),
            opt_actor: adam(config, config.actor_lr, &actor.params),
            opt_critic: adam(config, config.critic_lr, &critic.params),
            config: config.clone(),
            world,
            actor,
            critic,
            target,
            updates: 0,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.world.dims
    }

    pub fn initial_carry(&self) -> Carry {
        let dims = self.world.dims;
        Carry {
            rssm: RssmValue::zeros(&dims, 1),
            estimator: self
                .world
                .has_estimator()
                .then(|| EstimatorValue::zeros(&dims, 1)),
            prev_action: vec![0.0; dims.action],
        }
    }

    /// Choose an action for observation `x` and advance `carry`. Uses only
    /// the observation-action history held in `carry`; the true hidden
    /// parameter is never an input.
    pub fn act<R: Rng>(
        &self,
        carry: &mut Carry,
        x: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<ActOutput> {
        let dims = self.world.dims;
        let mut tape = Tape::new();
        tape.freeze(&self.world.params);
        tape.freeze(&self.actor.params);
        let xv = tape.constant(Tensor::new(&[1, dims.obs], x.to_vec())?);
        let a_prev = tape.constant(Tensor::new(&[1, dims.action], carry.prev_action.clone())?);

        let mut omega_est = None;
        let est_var = match &carry.estimator {
            Some(ev) => {
                let es = ev.constant(&mut tape);
                let (next, w) = self.world.estimator_step(&mut tape, es, xv, a_prev)?;
                carry.estimator = Some(EstimatorValue::read(&tape, &next));
                omega_est = Some(tape.data(w).to_vec());
                Some(w)
            }
            None => None,
        };
        let prev = carry.rssm.constant(&mut tape);
        let latent = if explore {
            LatentMode::Sample
        } else {
            LatentMode::Mode
        };
        let (post, _) = self
            .world
            .observe_step(&mut tape, &prev, a_prev, xv, est_var, latent, rng)?;
        let omega_pred = self.world.predict_omega(&mut tape, &post)?;
        let input = PolicyInput {
            h: post.h,
            z: post.z,
            x: xv,
            omega: if self.actor.conditioned() { omega_pred } else { None },
        };
        let dist = self.actor.dist(&mut tape, &input)?;
        let action = if explore {
            let noise = normal_noise(rng, 1, dims.action);
            dist.rsample(&mut tape, &noise)?.0
        } else {
            dist.mode(&mut tape)
        };
        // tanh rounds to exactly ±1 for large pre-activations; keep emitted
        // actions inside the open box.
        let action: Vec<f64> = tape
            .data(action)
            .iter()
            .map(|a| a.clamp(-ACTION_LIMIT, ACTION_LIMIT))
            .collect();
        if action.iter().any(|a| !a.is_finite()) {
            return Err(CoreError::NonFinite("action".into()));
        }
        carry.rssm = RssmValue::read(&tape, &post);
        carry.prev_action = action.clone();
        Ok(ActOutput {
            action,
            omega_est,
            omega_pred: omega_pred.map(|w| tape.data(w).to_vec()),
        })
    }

    /// World-model loss on `batch` without updating anything.
    pub fn evaluate_world_loss<R: Rng>(
        &self,
        batch: &EpisodeBatch,
        rng: &mut R,
    ) -> Result<LossComponents> {
        let mut tape = Tape::new();
        tape.freeze(&self.world.params);
        let out = self
            .world
            .loss(&mut tape, batch, &LossOptions::from_config(&self.config), rng)?;
        Ok(LossComponents::read(&tape, &out.terms))
    }

    /// One world-model update followed by one actor and one critic update on
    /// rollouts imagined from the batch's posterior states.
    pub fn train_step<R: Rng>(&mut self, batch: &EpisodeBatch, rng: &mut R) -> Result<UpdateReport> {
        let cfg = self.config.clone();

        // World model.
        let mut tape = Tape::new();
        let out = self
            .world
            .loss(&mut tape, batch, &LossOptions::from_config(&cfg), rng)?;
        let world = LossComponents::read(&tape, &out.terms);
        if !world.is_finite() {
            log::warn!("non-finite world-model loss {world:?}; update skipped");
            return Err(CoreError::NonFinite("world-model loss".into()));
        }
        let grads = tape.backward(out.terms.total)?;
        self.world.params.absorb(&tape, &grads, GradMode::Overwrite);
        if self.opt_world.step(&mut self.world.params) == StepOutcome::SkippedNonFinite {
            return Err(CoreError::NonFinite("world-model gradient".into()));
        }
        let starts = select_starts(&RssmValue::read(&tape, &out.posterior), cfg.imagination_starts(), rng);
        drop(tape);

        // Actor and critic on imagined rollouts.
        let mut tape = Tape::new();
        tape.freeze(&self.world.params);
        tape.freeze(&self.target);
        let seed = starts.constant(&mut tape);
        let opts = ImagineOptions {
            horizon: cfg.horizon,
            latent: LatentMode::Sample,
            action: ActionMode::Sample,
        };
        let traj = imagine_rollout(
            &mut tape,
            &self.world,
            &self.actor,
            &self.critic,
            &self.target,
            seed,
            &opts,
            rng,
        )?;
        let returns = lambda_returns_tape(&mut tape, &traj.rewards, &traj.values, cfg.gamma, cfg.lambda)?;
        let a_loss = actor_loss(&mut tape, &traj, &returns, cfg.entropy_coef)?;
        let c_loss = critic_loss(&mut tape, &self.critic, &traj, &returns)?;
        let (a_val, c_val) = (tape.item(a_loss), tape.item(c_loss));
        if !a_val.is_finite() || !c_val.is_finite() {
            log::warn!("non-finite actor/critic loss ({a_val}, {c_val}); update skipped");
            return Err(CoreError::NonFinite("actor/critic loss".into()));
        }
        let grads = tape.backward(a_loss)?;
        self.actor.params.absorb(&tape, &grads, GradMode::Overwrite);
        let grads = tape.backward(c_loss)?;
        self.critic.params.absorb(&tape, &grads, GradMode::Overwrite);
        drop(tape);
        self.opt_actor.step(&mut self.actor.params);
        self.opt_critic.step(&mut self.critic.params);

        self.updates += 1;
        if self.updates % cfg.target_every as u64 == 0 {
            self.target.copy_values_from(&self.critic.params)?;
        }
        Ok(UpdateReport {
            world,
            actor: a_val,
            critic: c_val,
        })
    }
}

/// Pick `k` of the posterior rows as imagination starts (all rows when
/// `k` covers them), keeping row order.
fn select_starts<R: Rng>(all: &RssmValue, k: usize, rng: &mut R) -> RssmValue {
    let rows = all.h.shape()[0];
    if k >= rows {
        return all.clone();
    }
    let mut idx = rand::seq::index::sample(rng, rows, k).into_vec();
    idx.sort_unstable();
    let pick = |t: &Tensor| {
        let w = t.shape()[1];
        let mut data = Vec::with_capacity(k * w);
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        Tensor::new(&[k, w], data).expect("k rows")
    };
    RssmValue {
        h: pick(&all.h),
        z: pick(&all.z),
        logits: pick(&all.logits),
    }
}
