use hipdream_autodiff::{ParamId, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic per-name parameter initialization.
///
/// Each tensor is drawn from its own stream keyed by `(seed, name)`, so a
/// parameter gets the same initial value no matter which other parameters
/// exist in the model.
#[derive(Debug, Clone, Copy)]
pub struct Init {
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Glorot-uniform scaled by the given gain.
    Glorot(f64),
    Zeros,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn tensor(&self, name: &str, shape: &[usize], scheme: Scheme) -> Tensor {
        match scheme {
            Scheme::Zeros => Tensor::zeros(shape),
            Scheme::Glorot(gain) => {
                let fan_in = shape.first().copied().unwrap_or(1);
                let fan_out = shape.get(1).copied().unwrap_or(1);
                let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(shape, data).expect("shape product matches")
            }
        }
    }

    pub fn add(
        &self,
        store: &mut ParamStore,
        name: &str,
        shape: &[usize],
        scheme: Scheme,
    ) -> Result<ParamId> {
        store.add(name, self.tensor(name, shape, scheme))
    }
}

/// Affine map over one or more named input segments:
/// `y = Σ_k x_k W_k + b`.
///
/// Segment weights are separate parameters (`{name}.w.{segment}`) so adding
/// an input never changes the shape of an existing weight.
#[derive(Debug, Clone)]
pub struct Linear {
    segments: Vec<(String, usize, ParamId)>,
    bias: ParamId,
    out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        inputs: &[(&str, usize)],
        out: usize,
        scheme: Scheme,
    ) -> Result<Self> {
        Self::with_extras(store, init, name, inputs, &[], out, scheme)
    }

    /// Like [`Linear::new`], followed by `extras` segments that do not count
    /// toward the Glorot fan-in. Adding an optional conditioning input then
    /// leaves the initial values of every other parameter unchanged.
    pub fn with_extras(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        inputs: &[(&str, usize)],
        extras: &[(&str, usize)],
        out: usize,
        scheme: Scheme,
    ) -> Result<Self> {
        let fan_in: usize = inputs.iter().map(|(_, d)| d).sum();
        let mut segments = Vec::with_capacity(inputs.len() + extras.len());
        for (seg, dim) in inputs.iter().chain(extras) {
            let pname = format!("{name}.w.{seg}");
            // Glorot limit computed from the full fan-in so splitting inputs
            // does not change the weight scale.
            let t = match scheme {
                Scheme::Zeros => Tensor::zeros(&[*dim, out]),
                Scheme::Glorot(gain) => {
                    let g = gain * ((*dim + out) as f64 / (fan_in + out) as f64).sqrt();
                    init.tensor(&pname, &[*dim, out], Scheme::Glorot(g))
                }
            };
            segments.push((seg.to_string(), *dim, store.add(pname, t)?));
        }
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out]))?;
        Ok(Self {
            segments,
            bias,
            out,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out
    }

    pub fn segments(&self) -> impl Iterator<Item = (&str, usize)> {
        self.segments.iter().map(|(n, d, _)| (n.as_str(), *d))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Var> {
        assert_eq!(
            inputs.len(),
            self.segments.len(),
            "Linear expects one input per segment"
        );
        let mut acc: Option<Var> = None;
        for (x, (_, _, w)) in inputs.iter().zip(&self.segments) {
            let w = tape.param(store, *w);
            let y = tape.matmul(*x, w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let b = tape.param(store, self.bias);
        let acc = acc.expect("at least one segment");
        tape.add(acc, b)
    }
}

/// Multi-layer perceptron with ELU hidden activations and an identity output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `inputs` are named segments of the first layer; `hidden` may be empty
    /// for a single affine map. The output layer uses `out_scheme`.
    pub fn new(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        inputs: &[(&str, usize)],
        hidden: &[usize],
        out: usize,
        out_scheme: Scheme,
    ) -> Result<Self> {
        Self::with_extras(store, init, name, inputs, &[], hidden, out, out_scheme)
    }

    /// First layer built with [`Linear::with_extras`]; forward inputs are
    /// `inputs` followed by `extras`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_extras(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        inputs: &[(&str, usize)],
        extras: &[(&str, usize)],
        hidden: &[usize],
        out: usize,
        out_scheme: Scheme,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev: Vec<(String, usize)> =
            inputs.iter().map(|(n, d)| (n.to_string(), *d)).collect();
        let mut first_extras = extras;
        for (i, &width) in hidden.iter().enumerate() {
            let segs: Vec<(&str, usize)> = prev.iter().map(|(n, d)| (n.as_str(), *d)).collect();
            layers.push(Linear::with_extras(
                store,
                init,
                &format!("{name}.l{i}"),
                &segs,
                first_extras,
                width,
                Scheme::Glorot(1.0),
            )?);
            first_extras = &[];
            prev = vec![("h".to_string(), width)];
        }
        let segs: Vec<(&str, usize)> = prev.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        layers.push(Linear::with_extras(
            store,
            init,
            &format!("{name}.l{}", hidden.len()),
            &segs,
            first_extras,
            out,
            out_scheme,
        )?);
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Var> {
        let (first, rest) = self.layers.split_first().expect("non-empty mlp");
        let mut h = first.forward(tape, store, inputs)?;
        for layer in rest {
            let a = tape.elu(h);
            h = layer.forward(tape, store, &[a])?;
        }
        Ok(h)
    }
}
