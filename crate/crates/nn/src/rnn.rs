use hipdream_autodiff::{AutodiffError, ParamId, ParamStore, Result, Tape, Var};

use crate::layers::{Init, Scheme};

fn check_dims(tape: &Tape, op: &'static str, x: Var, want: usize) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != want {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![s.first().copied().unwrap_or(0), want],
        });
    }
    Ok(())
}

/// Gated recurrent unit.
///
/// Gate layout along the `3H` axis is `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x Wx_r + h Wh_r + b_r)
/// u  = σ(x Wx_u + h Wh_u + b_u)
/// n  = tanh(x Wx_n + b_n + r ⊙ (h Wh_n))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
///
/// There is a single bias vector on the input side.
#[derive(Debug, Clone)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let wx = init.add(store, &format!("{name}.wx"), &[input, 3 * hidden], Scheme::Glorot(1.0))?;
        let wh = init.add(store, &format!("{name}.wh"), &[hidden, 3 * hidden], Scheme::Glorot(1.0))?;
        let b = init.add(store, &format!("{name}.b"), &[3 * hidden], Scheme::Zeros)?;
        Ok(Self {
            input,
            hidden,
            wx,
            wh,
            b,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    /// One step for a batch: `h: [B, H]`, `x: [B, in]` → `[B, H]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Result<Var> {
        check_dims(tape, "gru_step", x, self.input)?;
        check_dims(tape, "gru_step", h, self.hidden)?;
        let hd = self.hidden;
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        let gx = tape.matmul(x, wx)?;
        let gx = tape.add(gx, b)?;
        let gh = tape.matmul(h, wh)?;

        let gx_ru = tape.slice(gx, 1, 0, 2 * hd)?;
        let gh_ru = tape.slice(gh, 1, 0, 2 * hd)?;
        let ru = tape.add(gx_ru, gh_ru)?;
        let ru = tape.sigmoid(ru);
        let r = tape.slice(ru, 1, 0, hd)?;
        let u = tape.slice(ru, 1, hd, 2 * hd)?;

        let gx_n = tape.slice(gx, 1, 2 * hd, 3 * hd)?;
        let gh_n = tape.slice(gh, 1, 2 * hd, 3 * hd)?;
        let rh = tape.mul(r, gh_n)?;
        let n = tape.add(gx_n, rh)?;
        let n = tape.tanh(n);

        // n + u ⊙ (h - n)
        let d = tape.sub(h, n)?;
        let ud = tape.mul(u, d)?;
        tape.add(n, ud)
    }
}

/// Long short-term memory cell.
///
/// Gate layout along the `4H` axis is `[input | forget | candidate | output]`:
///
/// ```text
/// i = σ(·), f = σ(·), g = tanh(·), o = σ(·)   with (·) = x Wx + h Wh + b
/// c' = f ⊙ c + i ⊙ g
/// h' = o ⊙ tanh(c')
/// ```
///
/// The bias is zero-initialized, including the forget gate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    input: usize,
    hidden: usize,
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        init: &Init,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let wx = init.add(store, &format!("{name}.wx"), &[input, 4 * hidden], Scheme::Glorot(1.0))?;
        let wh = init.add(store, &format!("{name}.wh"), &[hidden, 4 * hidden], Scheme::Glorot(1.0))?;
        let b = init.add(store, &format!("{name}.b"), &[4 * hidden], Scheme::Zeros)?;
        Ok(Self {
            input,
            hidden,
            wx,
            wh,
            b,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    pub fn weight_ids(&self) -> (ParamId, ParamId) {
        (self.wx, self.wh)
    }

    /// One step: `(h, c): [B, H]`, `x: [B, in]` → `(h', c')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        (h, c): (Var, Var),
        x: Var,
    ) -> Result<(Var, Var)> {
        check_dims(tape, "lstm_step", x, self.input)?;
        check_dims(tape, "lstm_step", h, self.hidden)?;
        check_dims(tape, "lstm_step", c, self.hidden)?;
        let hd = self.hidden;
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        let gx = tape.matmul(x, wx)?;
        let gh = tape.matmul(h, wh)?;
        let z = tape.add(gx, gh)?;
        let z = tape.add(z, b)?;

        let ifg = tape.slice(z, 1, 0, 2 * hd)?;
        let ifg = tape.sigmoid(ifg);
        let i = tape.slice(ifg, 1, 0, hd)?;
        let f = tape.slice(ifg, 1, hd, 2 * hd)?;
        let g = tape.slice(z, 1, 2 * hd, 3 * hd)?;
        let g = tape.tanh(g);
        let o = tape.slice(z, 1, 3 * hd, 4 * hd)?;
        let o = tape.sigmoid(o);

        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}
