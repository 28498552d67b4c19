//! Recurrent state-space world model with an optional omega prediction head
//! and an optional recurrent omega estimator feeding the posterior.

use hipdream_autodiff::{ParamStore, Tape, Tensor, Var};
use hipdream_nn::{
    kl_balanced, kl_categorical, CategoricalLatentDist, GruCell, Init, LstmCell, Mlp, Scheme,
    UnitGaussianHead,
};
use rand::Rng;

use crate::config::{TrainConfig, Variant};
use crate::error::{CoreError, Result};

/// Sizes shared by the world model, actor and critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub obs: usize,
    pub action: usize,
    pub omega: usize,
    pub deter: usize,
    pub groups: usize,
    pub classes: usize,
    pub hidden: usize,
    pub mlp_layers: usize,
    pub estimator: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            obs: cfg.task.obs_dim(),
            action: cfg.task.action_dim(),
            omega: cfg.task.omega_dim(),
            deter: cfg.deter_size,
            groups: cfg.latent_groups,
            classes: cfg.latent_classes,
            hidden: cfg.hidden_size,
            mlp_layers: cfg.mlp_layers,
            estimator: cfg.estimator_size,
        }
    }

    /// Flattened one-hot latent width `G * C`.
    pub fn stoch(&self) -> usize {
        self.groups * self.classes
    }

    fn hidden_layers(&self) -> Vec<usize> {
        vec![self.hidden; self.mlp_layers]
    }
}

/// How a categorical latent is turned into the vector fed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// One-hot sample with a straight-through gradient.
    Sample,
    /// One-hot argmax with a straight-through gradient.
    Mode,
    /// The probabilities themselves. Smooth in the parameters, so used for
    /// finite-difference checks of whole losses.
    Expected,
}

/// Model state on a tape: recurrent `h`, latent `z` and the logits `z` came from.
#[derive(Debug, Clone, Copy)]
pub struct RssmState {
    pub h: Var,
    pub z: Var,
    pub logits: Var,
}

/// Detached copy of an [`RssmState`], used to carry state across tapes.
#[derive(Debug, Clone, PartialEq)]
pub struct RssmValue {
    pub h: Tensor,
    pub z: Tensor,
    pub logits: Tensor,
}

impl RssmValue {
    pub fn zeros(dims: &ModelDims, batch: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, dims.deter]),
            z: Tensor::zeros(&[batch, dims.stoch()]),
            logits: Tensor::zeros(&[batch, dims.stoch()]),
        }
    }

    pub fn read(tape: &Tape, s: &RssmState) -> Self {
        Self {
            h: tape.value(s.h).clone(),
            z: tape.value(s.z).clone(),
            logits: tape.value(s.logits).clone(),
        }
    }

    pub fn constant(&self, tape: &mut Tape) -> RssmState {
        RssmState {
            h: tape.constant(self.h.clone()),
            z: tape.constant(self.z.clone()),
            logits: tape.constant(self.logits.clone()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.is_finite() && self.z.is_finite()
    }
}

/// LSTM `(hidden, cell)` of the omega estimator.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorState {
    pub h: Var,
    pub c: Var,
}

/// Detached copy of an [`EstimatorState`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorValue {
    pub h: Tensor,
    pub c: Tensor,
}

impl EstimatorValue {
    pub fn zeros(dims: &ModelDims, batch: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, dims.estimator]),
            c: Tensor::zeros(&[batch, dims.estimator]),
        }
    }

    pub fn read(tape: &Tape, s: &EstimatorState) -> Self {
        Self {
            h: tape.value(s.h).clone(),
            c: tape.value(s.c).clone(),
        }
    }

    pub fn constant(&self, tape: &mut Tape) -> EstimatorState {
        EstimatorState {
            h: tape.constant(self.h.clone()),
            c: tape.constant(self.c.clone()),
        }
    }
}

/// Means of the unit-variance Gaussian heads.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub obs: Var,
    pub reward: Var,
    pub omega: Option<Var>,
}

/// `B` windows of `L` consecutive steps, stored time-major: row `t * B + b`
/// holds step `t` of window `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub batch: usize,
    pub len: usize,
    /// `[L*B, obs]`
    pub obs: Tensor,
    /// Action taken before each observation, `[L*B, action]`.
    pub prev_action: Tensor,
    /// Reward received on arrival at each observation, `[L*B, 1]`.
    pub reward: Tensor,
    /// True hidden parameter of the source episode, `[L*B, omega]`.
    pub omega: Tensor,
    /// Step starts an episode, `L*B` flags.
    pub is_first: Vec<bool>,
}

impl EpisodeBatch {
    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    /// Rows `[t*B, (t+1)*B)` of a time-major tensor.
    pub fn step_rows(tensor: &Tensor, batch: usize, t: usize) -> Tensor {
        let width = tensor.shape()[1];
        let data = tensor.data()[t * batch * width..(t + 1) * batch * width].to_vec();
        Tensor::new(&[batch, width], data).expect("slice of a 2-d tensor")
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let rows = self.batch * self.len;
        let check = |name: &str, t: &Tensor, w: usize| {
            if t.shape() != [rows, w] {
                Err(CoreError::Config(format!(
                    "batch field {name} has shape {:?}, expected [{rows}, {w}]",
                    t.shape()
                )))
            } else {
                Ok(())
            }
        };
        check("obs", &self.obs, dims.obs)?;
        check("prev_action", &self.prev_action, dims.action)?;
        check("reward", &self.reward, 1)?;
        check("omega", &self.omega, dims.omega)?;
        if self.is_first.len() != rows {
            return Err(CoreError::Config("is_first length mismatch".into()));
        }
        Ok(())
    }
}

/// How [`WorldModel::loss`] treats latents and the KL term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub latent: LatentMode,
    /// Use the balanced KL (gradient split by `kl_balance`) instead of a
    /// plain `KL(post ‖ prior)`. The value is the same either way.
    pub balanced: bool,
    pub kl_scale: f64,
    pub kl_balance: f64,
    pub free_nats: f64,
}

impl LossOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            latent: LatentMode::Sample,
            balanced: true,
            kl_scale: cfg.kl_scale,
            kl_balance: cfg.kl_balance,
            free_nats: cfg.free_nats,
        }
    }
}

/// Scalar loss terms, each already averaged over batch and time.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub recon: Var,
    pub reward: Var,
    pub kl: Var,
    pub omega_est: Option<Var>,
    pub omega_head: Option<Var>,
}

/// Plain-number record of [`LossTerms`]; absent terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    pub reward: f64,
    pub kl: f64,
    pub omega_est: f64,
    pub omega_head: f64,
}

impl LossComponents {
    pub fn read(tape: &Tape, t: &LossTerms) -> Self {
        Self {
            total: tape.item(t.total),
            recon: tape.item(t.recon),
            reward: tape.item(t.reward),
            kl: tape.item(t.kl),
            omega_est: t.omega_est.map_or(0.0, |v| tape.item(v)),
            omega_head: t.omega_head.map_or(0.0, |v| tape.item(v)),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.recon,
            self.reward,
            self.kl,
            self.omega_est,
            self.omega_head,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Output of [`WorldModel::loss`].
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub terms: LossTerms,
    /// Posterior states of every row, time-major `[L*B, ·]`, still on the tape.
    pub posterior: RssmState,
}

#[derive(Debug, Clone)]
struct Estimator {
    cell: LstmCell,
    head: Mlp,
}

/// All world-model networks, jointly parameterized by one store.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub params: ParamStore,
    pub dims: ModelDims,
    pub variant: Variant,
    encoder: Mlp,
    cell: GruCell,
    posterior: Mlp,
    prior: Mlp,
    decoder: Mlp,
    reward: Mlp,
    omega_head: Option<Mlp>,
    estimator: Option<Estimator>,
}

impl WorldModel {
    /// Build with per-name deterministic initialization: parameters shared
    /// between variants start from identical values.
    pub fn new(dims: ModelDims, variant: Variant, seed: u64) -> Result<Self> {
        let init = Init::new(seed);
        let mut p = ParamStore::new();
        let hidden = dims.hidden_layers();
        let stoch = dims.stoch();
        let encoder = Mlp::new(
            &mut p,
            &init,
            "encoder",
            &[("x", dims.obs)],
            &hidden,
            dims.hidden,
            Scheme::Glorot(1.0),
        )?;
        let cell = GruCell::new(&mut p, &init, "cell", stoch + dims.action, dims.deter)?;
        let omega_extra: &[(&str, usize)] = if variant.has_estimator() {
            &[("omega", dims.omega)]
        } else {
            &[]
        };
        let posterior = Mlp::with_extras(
            &mut p,
            &init,
            "posterior",
            &[("h", dims.deter), ("embed", dims.hidden)],
            omega_extra,
            &[dims.hidden],
            stoch,
            Scheme::Glorot(1.0),
        )?;
        let prior = Mlp::new(
            &mut p,
            &init,
            "prior",
            &[("h", dims.deter)],
            &[dims.hidden],
            stoch,
            Scheme::Glorot(1.0),
        )?;
        let feat = [("h", dims.deter), ("z", stoch)];
        let decoder = Mlp::new(&mut p, &init, "decoder", &feat, &hidden, dims.obs, Scheme::Glorot(1.0))?;
        let reward = Mlp::new(&mut p, &init, "reward", &feat, &hidden, 1, Scheme::Glorot(1.0))?;
        let omega_head = if variant.has_omega_head() {
            Some(Mlp::new(&mut p, &init, "omega_head", &feat, &hidden, dims.omega, Scheme::Zeros)?)
        } else {
            None
        };
        let estimator = if variant.has_estimator() {
            let cell = LstmCell::new(
                &mut p,
                &init,
                "estimator.cell",
                dims.obs + dims.action,
                dims.estimator,
            )?;
            let head = Mlp::new(
                &mut p,
                &init,
                "estimator.head",
                &[("h", dims.estimator)],
                &[dims.estimator],
                dims.omega,
                Scheme::Zeros,
            )?;
            Some(Estimator { cell, head })
        } else {
            None
        };
        Ok(Self {
            params: p,
            dims,
            variant,
            encoder,
            cell,
            posterior,
            prior,
            decoder,
            reward,
            omega_head,
            estimator,
        })
    }

    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Self::new(ModelDims::from_config(cfg), cfg.model, cfg.seed)
    }

    pub fn has_estimator(&self) -> bool {
        self.estimator.is_some()
    }

    pub fn has_omega_head(&self) -> bool {
        self.omega_head.is_some()
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> RssmState {
        RssmValue::zeros(&self.dims, batch).constant(tape)
    }

    pub fn initial_estimator(&self, tape: &mut Tape, batch: usize) -> Option<EstimatorState> {
        self.estimator
            .as_ref()
            .map(|_| EstimatorValue::zeros(&self.dims, batch).constant(tape))
    }

    fn latent(
        &self,
        tape: &mut Tape,
        logits: Var,
        mode: LatentMode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Var> {
        let dist = CategoricalLatentDist::new(tape, logits, self.dims.groups, self.dims.classes)?;
        Ok(match mode {
            LatentMode::Sample => dist.sample_straight_through(tape, rng)?,
            LatentMode::Mode => dist.mode_straight_through(tape)?,
            LatentMode::Expected => dist.probs(tape)?,
        })
    }

    fn estimator_cell(
        &self,
        tape: &mut Tape,
        state: EstimatorState,
        x: Var,
        a_prev: Var,
    ) -> Result<EstimatorState> {
        let est = self.estimator.as_ref().expect("variant has an estimator");
        let input = tape.concat(&[x, a_prev], 1)?;
        let (h, c) = est.cell.step(tape, &self.params, (state.h, state.c), input)?;
        Ok(EstimatorState { h, c })
    }

    fn estimator_head(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let est = self.estimator.as_ref().expect("variant has an estimator");
        Ok(est.head.forward(tape, &self.params, &[h])?)
    }

    /// One estimator step on `(x_t, a_{t-1})`, returning the new state and
    /// the omega estimate. Fails for variants without an estimator.
    pub fn estimator_step(
        &self,
        tape: &mut Tape,
        state: EstimatorState,
        x: Var,
        a_prev: Var,
    ) -> Result<(EstimatorState, Var)> {
        if self.estimator.is_none() {
            return Err(CoreError::Config(format!(
                "variant {} has no estimator",
                self.variant
            )));
        }
        let next = self.estimator_cell(tape, state, x, a_prev)?;
        let omega = self.estimator_head(tape, next.h)?;
        Ok((next, omega))
    }

    /// `h_t = f(h_{t-1}, z_{t-1}, a_{t-1})`.
    pub fn recurrent(&self, tape: &mut Tape, prev: &RssmState, a_prev: Var) -> Result<Var> {
        let input = tape.concat(&[prev.z, a_prev], 1)?;
        Ok(self.cell.step(tape, &self.params, prev.h, input)?)
    }

    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(self.encoder.forward(tape, &self.params, &[x])?)
    }

    fn posterior_logits(
        &self,
        tape: &mut Tape,
        h: Var,
        embed: Var,
        omega_est: Option<Var>,
    ) -> Result<Var> {
        let mut inputs = vec![h, embed];
        match (self.variant.has_estimator(), omega_est) {
            (true, Some(w)) => inputs.push(w),
            (false, None) => {}
            (true, None) => {
                return Err(CoreError::Config(
                    "posterior of this variant needs an omega estimate".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(CoreError::Config(format!(
                    "variant {} does not condition the posterior on omega",
                    self.variant
                )))
            }
        }
        Ok(self.posterior.forward(tape, &self.params, &inputs)?)
    }

    pub fn prior_logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        Ok(self.prior.forward(tape, &self.params, &[h])?)
    }

    fn observe_embedded(
        &self,
        tape: &mut Tape,
        prev: &RssmState,
        a_prev: Var,
        embed: Var,
        omega_est: Option<Var>,
        mode: LatentMode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<RssmState> {
        let h = self.recurrent(tape, prev, a_prev)?;
        let logits = self.posterior_logits(tape, h, embed, omega_est)?;
        let z = self.latent(tape, logits, mode, rng)?;
        Ok(RssmState { h, z, logits })
    }

    /// Filter one observation: returns the posterior state and the prior
    /// logits computed from the same `h_t`.
    #[allow(clippy::too_many_arguments)]
    pub fn observe_step<R: Rng>(
        &self,
        tape: &mut Tape,
        prev: &RssmState,
        a_prev: Var,
        x: Var,
        omega_est: Option<Var>,
        mode: LatentMode,
        rng: &mut R,
    ) -> Result<(RssmState, Var)> {
        let embed = self.encode(tape, x)?;
        let post = self.observe_embedded(tape, prev, a_prev, embed, omega_est, mode, rng)?;
        let prior = self.prior_logits(tape, post.h)?;
        Ok((post, prior))
    }

    /// Advance without an observation; the latent comes from the prior.
    pub fn imagine_step<R: Rng>(
        &self,
        tape: &mut Tape,
        prev: &RssmState,
        a: Var,
        mode: LatentMode,
        rng: &mut R,
    ) -> Result<RssmState> {
        let h = self.recurrent(tape, prev, a)?;
        let logits = self.prior_logits(tape, h)?;
        let z = self.latent(tape, logits, mode, rng)?;
        Ok(RssmState { h, z, logits })
    }

    /// Observation, reward and (if present) omega means from `(h, z)`.
    pub fn predict_heads(&self, tape: &mut Tape, s: &RssmState) -> Result<Heads> {
        let obs = self.decoder.forward(tape, &self.params, &[s.h, s.z])?;
        let reward = self.reward.forward(tape, &self.params, &[s.h, s.z])?;
        let omega = match &self.omega_head {
            Some(head) => Some(head.forward(tape, &self.params, &[s.h, s.z])?),
            None => None,
        };
        Ok(Heads { obs, reward, omega })
    }

    /// Predicted omega from `(h, z)`, if this variant has the head.
    pub fn predict_omega(&self, tape: &mut Tape, s: &RssmState) -> Result<Option<Var>> {
        match &self.omega_head {
            Some(head) => Ok(Some(head.forward(tape, &self.params, &[s.h, s.z])?)),
            None => Ok(None),
        }
    }

    /// Sum of per-row negative log-likelihoods and the KL term, averaged
    /// over batch and time.
    pub fn loss<R: Rng>(
        &self,
        tape: &mut Tape,
        batch: &EpisodeBatch,
        opts: &LossOptions,
        rng: &mut R,
    ) -> Result<LossOutput> {
        batch.validate(&self.dims)?;
        let (b, len) = (batch.batch, batch.len);
        let x_all = tape.constant(batch.obs.clone());
        let embed_all = self.encode(tape, x_all)?;

        let mut state = self.initial_state(tape, b);
        let mut est = self.initial_estimator(tape, b);
        let mut hs = Vec::with_capacity(len);
        let mut zs = Vec::with_capacity(len);
        let mut post_logits = Vec::with_capacity(len);
        let mut est_hs = Vec::with_capacity(len);
        for t in 0..len {
            let first = &batch.is_first[t * b..(t + 1) * b];
            if first.iter().all(|f| *f) {
                state = self.initial_state(tape, b);
                est = self.initial_estimator(tape, b);
            } else if first.iter().any(|f| *f) {
                let keep: Vec<f64> = first.iter().map(|f| if *f { 0.0 } else { 1.0 }).collect();
                let mask = tape.constant(Tensor::new(&[b, 1], keep)?);
                state = RssmState {
                    h: tape.mul(state.h, mask)?,
                    z: tape.mul(state.z, mask)?,
                    logits: state.logits,
                };
                if let Some(e) = est {
                    est = Some(EstimatorState {
                        h: tape.mul(e.h, mask)?,
                        c: tape.mul(e.c, mask)?,
                    });
                }
            }
            let a_prev = tape.constant(EpisodeBatch::step_rows(&batch.prev_action, b, t));
            let omega_est = match est {
                Some(e) => {
                    let x_t = tape.constant(EpisodeBatch::step_rows(&batch.obs, b, t));
                    let next = self.estimator_cell(tape, e, x_t, a_prev)?;
                    est = Some(next);
                    est_hs.push(next.h);
                    // The estimate conditions the posterior at the same step.
                    Some(self.estimator_head(tape, next.h)?)
                }
                None => None,
            };
            let embed = tape.slice(embed_all, 0, t * b, (t + 1) * b)?;
            state = self.observe_embedded(tape, &state, a_prev, embed, omega_est, opts.latent, rng)?;
            hs.push(state.h);
            zs.push(state.z);
            post_logits.push(state.logits);
        }
        let h_all = tape.concat(&hs, 0)?;
        let z_all = tape.concat(&zs, 0)?;
        let post_all = tape.concat(&post_logits, 0)?;
        let posterior = RssmState {
            h: h_all,
            z: z_all,
            logits: post_all,
        };
        let prior_all = self.prior_logits(tape, h_all)?;
        let heads = self.predict_heads(tape, &posterior)?;

        let recon = UnitGaussianHead::new(heads.obs).nll(tape, x_all)?;
        let recon = tape.mean(recon);
        let r_target = tape.constant(batch.reward.clone());
        let reward = UnitGaussianHead::new(heads.reward).nll(tape, r_target)?;
        let reward = tape.mean(reward);

        let (g, c) = (self.dims.groups, self.dims.classes);
        let post = CategoricalLatentDist::new(tape, post_all, g, c)?;
        let prior = CategoricalLatentDist::new(tape, prior_all, g, c)?;
        let kl = if opts.balanced {
            kl_balanced(tape, &post, &prior, opts.kl_balance)?
        } else {
            kl_categorical(tape, &post, &prior)?
        };
        let kl = tape.mean(kl);
        let kl_term = if opts.free_nats > 0.0 {
            tape.clamp_min(kl, opts.free_nats)
        } else {
            kl
        };
        let kl_term = tape.scale(kl_term, opts.kl_scale);

        let omega_target = tape.constant(batch.omega.clone());
        let omega_head = match heads.omega {
            Some(mean) => {
                let nll = UnitGaussianHead::new(mean).nll(tape, omega_target)?;
                Some(tape.mean(nll))
            }
            None => None,
        };
        let omega_est = if est_hs.is_empty() {
            None
        } else {
            let eh = tape.concat(&est_hs, 0)?;
            let mean = self.estimator_head(tape, eh)?;
            let nll = UnitGaussianHead::new(mean).nll(tape, omega_target)?;
            Some(tape.mean(nll))
        };

        let mut total = tape.add(recon, reward)?;
        total = tape.add(total, kl_term)?;
        if let Some(v) = omega_est {
            total = tape.add(total, v)?;
        }
        if let Some(v) = omega_head {
            total = tape.add(total, v)?;
        }
        Ok(LossOutput {
            terms: LossTerms {
                total,
                recon,
                reward,
                kl,
                omega_est,
                omega_head,
            },
            posterior,
        })
    }
}
