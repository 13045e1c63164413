use rand::Rng;

use super::params::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected layer `y = x W + b` on `[B, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(
            &format!("{name}.w"),
            glorot_uniform(rng, &[in_dim, out_dim], in_dim, out_dim),
        );
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p.var(self.w))?;
        g.add(xw, p.var(self.b))
    }
}

/// Hidden and cell state, each `[B, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell with peephole connections from `c_{t-1}` into the input,
/// forget and output gates:
///
/// ```text
/// i = σ(Wxi x + Whi h + Wci c + bi)
/// f = σ(Wxf x + Whf h + Wcf c + bf)
/// c' = f ⊙ c + i ⊙ tanh(Wxc x + Whc h + bc)
/// o = σ(Wxo x + Who h + Wco c + bo)
/// h' = o ⊙ tanh(c')
/// ```
///
/// `wx: [in, 4H]` and `wh: [H, 4H]` hold the gates in order i, f, c, o;
/// `wc: [H, 3H]` holds the peepholes in order i, f, o.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub wc: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = hidden;
        let wx = store.add(&format!("{name}.wx"), glorot_uniform(rng, &[input, 4 * h], input, h));
        let wh = store.add(&format!("{name}.wh"), glorot_uniform(rng, &[h, 4 * h], h, h));
        let wc = store.add(&format!("{name}.wc"), glorot_uniform(rng, &[h, 3 * h], h, h));
        let mut bias = vec![T::zero(); 4 * h];
        for v in &mut bias[h..2 * h] {
            *v = T::one();
        }
        let b = store.add(&format!("{name}.b"), Tensor::new(&[4 * h], bias).unwrap());
        Lstm { wx, wh, wc, b, input, hidden }
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<T>, batch: usize) -> LstmState {
        let h = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let c = g.constant(Tensor::zeros(&[batch, self.hidden]));
        LstmState { h, c }
    }

    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        s: LstmState,
    ) -> Result<LstmState> {
        let hd = self.hidden;
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.input {
            return Err(Error::Shape {
                op: "lstm_step input",
                lhs: xs.to_vec(),
                rhs: vec![self.input],
            });
        }
        let hs = g.shape(s.h);
        if hs != [xs[0], hd] || g.shape(s.c) != hs {
            return Err(Error::Shape {
                op: "lstm_step state",
                lhs: hs.to_vec(),
                rhs: vec![xs[0], hd],
            });
        }
        let zx = g.matmul(x, p.var(self.wx))?;
        let zh = g.matmul(s.h, p.var(self.wh))?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, p.var(self.b))?;
        let peep = g.matmul(s.c, p.var(self.wc))?;

        let zi = g.slice(z, 0, hd)?;
        let pi = g.slice(peep, 0, hd)?;
        let i = g.add(zi, pi)?;
        let i = g.sigmoid(i);

        let zf = g.slice(z, hd, 2 * hd)?;
        let pf = g.slice(peep, hd, 2 * hd)?;
        let f = g.add(zf, pf)?;
        let f = g.sigmoid(f);

        let zc = g.slice(z, 2 * hd, 3 * hd)?;
        let cand = g.tanh(zc);

        let zo = g.slice(z, 3 * hd, 4 * hd)?;
        let po = g.slice(peep, 2 * hd, 3 * hd)?;
        let o = g.add(zo, po)?;
        let o = g.sigmoid(o);

        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Like [`Lstm::step`], but rows whose `mask` entry is 0 keep their old
    /// state. `mask` is `[B, H]` of zeros and ones.
    pub fn step_masked<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        s: LstmState,
        mask: Var,
        inv_mask: Var,
    ) -> Result<LstmState> {
        let n = self.step(g, p, x, s)?;
        let blend = |g: &mut Graph<T>, new: Var, old: Var| -> Result<Var> {
            let a = g.mul(new, mask)?;
            let b = g.mul(old, inv_mask)?;
            g.add(a, b)
        };
        let h = blend(g, n.h, s.h)?;
        let c = blend(g, n.c, s.c)?;
        Ok(LstmState { h, c })
    }
}
