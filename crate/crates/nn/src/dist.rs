//! Latent, action and likelihood distributions.

use std::f64::consts::{LN_2, PI};

use hipdream_autodiff::{softmax_in_place, softplus, AutodiffError, Result, Tape, Tensor, Var};
use rand::Rng;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-8;

/// `G` independent categoricals of `C` classes each, stored as flat logits `[B, G*C]`.
#[derive(Debug, Clone, Copy)]
pub struct CategoricalLatentDist {
    pub logits: Var,
    pub groups: usize,
    pub classes: usize,
}

impl CategoricalLatentDist {
    pub fn new(tape: &Tape, logits: Var, groups: usize, classes: usize) -> Result<Self> {
        let s = tape.shape(logits);
        if s.len() != 2 || s[1] != groups * classes {
            return Err(AutodiffError::ShapeMismatch {
                op: "categorical_latent",
                lhs: s.to_vec(),
                rhs: vec![s.first().copied().unwrap_or(0), groups * classes],
            });
        }
        Ok(Self {
            logits,
            groups,
            classes,
        })
    }

    fn batch(&self, tape: &Tape) -> usize {
        tape.shape(self.logits)[0]
    }

    /// Per-group softmax, flat `[B, G*C]`.
    pub fn probs(&self, tape: &mut Tape) -> Result<Var> {
        let b = self.batch(tape);
        let grouped = tape.reshape(self.logits, &[b * self.groups, self.classes])?;
        let p = tape.softmax(grouped)?;
        tape.reshape(p, &[b, self.groups * self.classes])
    }

    /// `onehot + probs - sg(probs)`: the forward value is exactly `onehot`,
    /// the backward pass sees `probs`.
    fn straight_through(&self, tape: &mut Tape, probs: Var, onehot: Tensor) -> Result<Var> {
        let frozen = tape.detach(probs);
        let delta = tape.sub(probs, frozen)?;
        let hard = tape.constant(onehot);
        tape.add(hard, delta)
    }

    /// One-hot sample per group with a straight-through gradient.
    pub fn sample_straight_through<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        rng: &mut R,
    ) -> Result<Var> {
        let probs = self.probs(tape)?;
        let onehot = self.sample_one_hot(tape.value(probs), rng);
        self.straight_through(tape, probs, onehot)
    }

    /// Per-group argmax one-hot with a straight-through gradient.
    pub fn mode_straight_through(&self, tape: &mut Tape) -> Result<Var> {
        let probs = self.probs(tape)?;
        let p = tape.value(probs);
        let mut hot = vec![0.0; p.len()];
        for (g, chunk) in p.data().chunks(self.classes).enumerate() {
            let arg = chunk
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > chunk[best] { i } else { best });
            hot[g * self.classes + arg] = 1.0;
        }
        let onehot = Tensor::new(p.shape(), hot)?;
        self.straight_through(tape, probs, onehot)
    }

    /// Draw one class per group by inverting the cumulative distribution.
    pub fn sample_one_hot<R: Rng + ?Sized>(&self, probs: &Tensor, rng: &mut R) -> Tensor {
        let mut hot = vec![0.0; probs.len()];
        for (g, chunk) in probs.data().chunks(self.classes).enumerate() {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = self.classes - 1;
            for (i, &p) in chunk.iter().enumerate() {
                cum += p;
                if u < cum {
                    pick = i;
                    break;
                }
            }
            hot[g * self.classes + pick] = 1.0;
        }
        Tensor::new(probs.shape(), hot).expect("same shape as probs")
    }
}

fn log_floored(tape: &mut Tape, probs: Var) -> Var {
    let p = tape.clamp_min(probs, PROB_FLOOR);
    tape.log(p)
}

/// `KL(p ‖ q)` summed over groups, one value per batch row: `[B]`.
pub fn kl_categorical(
    tape: &mut Tape,
    p: &CategoricalLatentDist,
    q: &CategoricalLatentDist,
) -> Result<Var> {
    if (p.groups, p.classes) != (q.groups, q.classes) {
        return Err(AutodiffError::ShapeMismatch {
            op: "kl_categorical",
            lhs: vec![p.groups, p.classes],
            rhs: vec![q.groups, q.classes],
        });
    }
    let pp = p.probs(tape)?;
    let qp = q.probs(tape)?;
    let lp = log_floored(tape, pp);
    let lq = log_floored(tape, qp);
    let d = tape.sub(lp, lq)?;
    let terms = tape.mul(pp, d)?;
    tape.sum_axis(terms, 1)
}

/// KL with asymmetric gradient flow: `alpha` of the gradient trains the
/// prior toward the posterior, `1 - alpha` regularizes the posterior.
/// The value equals `kl_categorical(post, prior)`.
pub fn kl_balanced(
    tape: &mut Tape,
    post: &CategoricalLatentDist,
    prior: &CategoricalLatentDist,
    alpha: f64,
) -> Result<Var> {
    let post_sg = CategoricalLatentDist {
        logits: tape.detach(post.logits),
        ..*post
    };
    let prior_sg = CategoricalLatentDist {
        logits: tape.detach(prior.logits),
        ..*prior
    };
    let train_prior = kl_categorical(tape, &post_sg, prior)?;
    let train_post = kl_categorical(tape, post, &prior_sg)?;
    let a = tape.scale(train_prior, alpha);
    let b = tape.scale(train_post, 1.0 - alpha);
    tape.add(a, b)
}

/// Plain-number KL between two flat logit rows; shares no code with the tape version.
pub fn kl_categorical_value(p_logits: &[f64], q_logits: &[f64], classes: usize) -> f64 {
    let mut total = 0.0;
    for (pl, ql) in p_logits.chunks(classes).zip(q_logits.chunks(classes)) {
        let mut p = pl.to_vec();
        let mut q = ql.to_vec();
        softmax_in_place(&mut p);
        softmax_in_place(&mut q);
        for (pi, qi) in p.iter().zip(&q) {
            total += pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln());
        }
    }
    total
}

/// Gaussian over pre-squash actions followed by `tanh`, per action dimension.
#[derive(Debug, Clone, Copy)]
pub struct SquashedGaussianDist {
    pub mean: Var,
    pub log_std: Var,
}

impl SquashedGaussianDist {
    /// Split raw head output `[B, 2A]` into mean and a log-std mapped smoothly
    /// into `[min_log_std, max_log_std]`.
    pub fn from_raw(
        tape: &mut Tape,
        raw: Var,
        action_dim: usize,
        min_log_std: f64,
        max_log_std: f64,
    ) -> Result<Self> {
        let mean = tape.slice(raw, 1, 0, action_dim)?;
        let s = tape.slice(raw, 1, action_dim, 2 * action_dim)?;
        let s = tape.sigmoid(s);
        let s = tape.scale(s, max_log_std - min_log_std);
        let log_std = tape.add_scalar(s, min_log_std);
        Ok(Self { mean, log_std })
    }

    /// Reparameterized sample from standard-normal `noise` shaped like the
    /// mean. Returns the squashed action and its per-row log-probability `[B]`.
    pub fn rsample(&self, tape: &mut Tape, noise: &Tensor) -> Result<(Var, Var)> {
        let eps = tape.constant(noise.clone());
        let std = tape.exp(self.log_std);
        let scaled = tape.mul(std, eps)?;
        let u = tape.add(self.mean, scaled)?;
        let action = tape.tanh(u);

        // log N(u; mean, std) = -ε²/2 - ln σ - ln(2π)/2
        let base = noise.map(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln());
        let base = tape.constant(base);
        let lp = tape.sub(base, self.log_std)?;
        // ln(1 - tanh²u) = 2 (ln 2 - u - softplus(-2u))
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let t = tape.add(u, sp)?;
        let t = tape.neg(t);
        let t = tape.add_scalar(t, LN_2);
        let corr = tape.scale(t, 2.0);
        let lp = tape.sub(lp, corr)?;
        let log_prob = tape.sum_axis(lp, 1)?;
        Ok((action, log_prob))
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mode(&self, tape: &mut Tape) -> Var {
        tape.tanh(self.mean)
    }
}

/// Density of a squashed Gaussian at `action ∈ (-1, 1)` for one dimension.
pub fn squashed_log_prob(mean: f64, log_std: f64, action: f64) -> f64 {
    let u = action.atanh();
    let z = (u - mean) / log_std.exp();
    let corr = 2.0 * (LN_2 - u - softplus(-2.0 * u));
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - corr
}

/// Unit-variance Gaussian likelihood head.
#[derive(Debug, Clone, Copy)]
pub struct UnitGaussianHead {
    pub mean: Var,
}

impl UnitGaussianHead {
    pub fn new(mean: Var) -> Self {
        Self { mean }
    }

    /// `0.5 ‖mean - y‖² + 0.5 d ln 2π` per batch row, `[B]`.
    pub fn nll(&self, tape: &mut Tape, target: Var) -> Result<Var> {
        let d = *tape.shape(self.mean).last().unwrap_or(&1);
        let diff = tape.sub(self.mean, target)?;
        let sq = tape.square(diff);
        let s = tape.sum_axis(sq, 1)?;
        let s = tape.scale(s, 0.5);
        Ok(tape.add_scalar(s, 0.5 * d as f64 * (2.0 * PI).ln()))
    }
}
