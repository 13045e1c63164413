use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_gradients, RmsProp};
use super::params::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::data::LocalGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

/// Convolutional encoder-decoder for local occupancy grids.
///
/// Encoder: two 3×3 stride-2 convolutions (8 then 16 channels, ReLU) and a
/// linear layer to `feat` values. The decoder mirrors it with transposed
/// convolutions and ends in a sigmoid so outputs stay in [0, 1].
#[derive(Debug, Clone)]
pub struct GridAutoencoder {
    pub rows: usize,
    pub cols: usize,
    pub feat: usize,
    c1: Conv,
    c2: Conv,
    fc_enc: (ParamId, ParamId),
    fc_dec: (ParamId, ParamId),
    t1: Conv,
    t2: Conv,
}

const CH1: usize = 8;
const CH2: usize = 16;
/// Initial output logit; local grids are mostly free space.
const OUT_BIAS: f64 = -2.0;

fn half(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// Output padding that makes a stride-2 transposed conv land on `target`.
fn out_pad(from: usize, target: usize) -> usize {
    target + 1 - 2 * from
}

impl GridAutoencoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        rows: usize,
        cols: usize,
        feat: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = |store: &mut ParamStore<T>, rng: &mut _, name: &str, o: usize, c: usize| Conv {
            w: store.add(
                &format!("{prefix}enc.{name}.w"),
                glorot_uniform(rng, &[o, c, 3, 3], c * 9, o * 9),
            ),
            b: store.add(&format!("{prefix}enc.{name}.b"), Tensor::zeros(&[o])),
        };
        let c1 = conv(store, rng, "conv1", CH1, 1);
        let c2 = conv(store, rng, "conv2", CH2, CH1);
        let flat = CH2 * half(half(rows)) * half(half(cols));
        let fc_enc = (
            store.add(&format!("{prefix}enc.fc.w"), glorot_uniform(rng, &[flat, feat], flat, feat)),
            store.add(&format!("{prefix}enc.fc.b"), Tensor::zeros(&[feat])),
        );
        let fc_dec = (
            store.add(&format!("{prefix}dec.fc.w"), glorot_uniform(rng, &[feat, flat], feat, flat)),
            store.add(&format!("{prefix}dec.fc.b"), Tensor::zeros(&[flat])),
        );
        let convt = |store: &mut ParamStore<T>, rng: &mut _, name: &str, c: usize, o: usize| Conv {
            w: store.add(
                &format!("{prefix}dec.{name}.w"),
                glorot_uniform(rng, &[c, o, 3, 3], c * 9, o * 9),
            ),
            b: store.add(&format!("{prefix}dec.{name}.b"), Tensor::zeros(&[o])),
        };
        let t1 = convt(store, rng, "deconv1", CH2, CH1);
        let t2 = convt(store, rng, "deconv2", CH1, 1);
        *store.get_mut(t2.b) = Tensor::full(&[1], T::of(OUT_BIAS));
        GridAutoencoder {
            rows,
            cols,
            feat,
            c1,
            c2,
            fc_enc,
            fc_dec,
            t1,
            t2,
        }
    }

    /// `[B, rows*cols]` or `[B, 1, rows, cols]` → `[B, feat]`.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let x = g.reshape(x, &[b, 1, self.rows, self.cols])?;
        let h = g.conv2d(x, p.var(self.c1.w), p.var(self.c1.b), 2, 1)?;
        let h = g.relu(h);
        let h = g.conv2d(h, p.var(self.c2.w), p.var(self.c2.b), 2, 1)?;
        let h = g.relu(h);
        let n = g.value(h).len() / b;
        let h = g.reshape(h, &[b, n])?;
        let f = g.matmul(h, p.var(self.fc_enc.0))?;
        g.add(f, p.var(self.fc_enc.1))
    }

    /// `[B, feat]` → `[B, 1, rows, cols]` in [0, 1].
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        let b = g.shape(f)[0];
        let (r1, c1) = (half(self.rows), half(self.cols));
        let (r2, c2) = (half(r1), half(c1));
        let h = g.matmul(f, p.var(self.fc_dec.0))?;
        let h = g.add(h, p.var(self.fc_dec.1))?;
        let h = g.relu(h);
        let h = g.reshape(h, &[b, CH2, r2, c2])?;
        let (op1, op2) = (out_pad(r2, r1), out_pad(r1, self.rows));
        if op1 != out_pad(c2, c1) || op2 != out_pad(c1, self.cols) {
            return Err(Error::Config(format!(
                "grid {}x{} has mismatched row/column parity",
                self.rows, self.cols
            )));
        }
        let h = g.conv_transpose2d(h, p.var(self.t1.w), p.var(self.t1.b), 2, 1, op1)?;
        let h = g.relu(h);
        let h = g.conv_transpose2d(h, p.var(self.t2.w), p.var(self.t2.b), 2, 1, op2)?;
        Ok(g.sigmoid(h))
    }

    /// Summed squared reconstruction error, averaged over the batch.
    pub fn reconstruction_loss<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let f = self.encode(g, p, x)?;
        let y = self.decode(g, p, f)?;
        let x4 = g.reshape(x, &[b, 1, self.rows, self.cols])?;
        let d = g.sub(y, x4)?;
        let sq = g.square(d);
        let s = g.sum(sq);
        Ok(g.scale(s, 1.0 / b as f64))
    }

    /// Encodes grids outside of any training graph.
    pub fn features<T: Real>(&self, store: &ParamStore<T>, grids: &[&LocalGrid]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(grid_batch(grids, self.rows, self.cols)?);
        let f = self.encode(&mut g, &p, x)?;
        Ok(g.value(f).clone())
    }
}

pub(crate) fn grid_batch<T: Real>(grids: &[&LocalGrid], rows: usize, cols: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(grids.len() * rows * cols);
    for gr in grids {
        if gr.rows != rows || gr.cols != cols {
            return Err(Error::Shape {
                op: "grid batch",
                lhs: vec![gr.rows, gr.cols],
                rhs: vec![rows, cols],
            });
        }
        data.extend(gr.cells.iter().map(|&v| T::of(v)));
    }
    Tensor::new(&[grids.len(), rows * cols], data)
}

/// Settings for encoder pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 500,
            batch: 16,
            lr: 6e-2,
            clip: 1.0,
        }
    }
}

/// Fits the autoencoder to `grids` with RMSProp on the reconstruction loss.
/// Returns the per-step loss trace.
pub fn pretrain_encoder(
    ae: &GridAutoencoder,
    store: &mut ParamStore<f32>,
    grids: &[LocalGrid],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if grids.is_empty() {
        return Err(Error::Input("encoder pretraining needs at least one grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = RmsProp::new(store);
    let mut order: Vec<usize> = (0..grids.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch.clamp(1, grids.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut pick = Vec::with_capacity(batch);
        while pick.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            pick.push(&grids[order[cursor]]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(grid_batch(&pick, ae.rows, ae.cols)?);
        let loss = ae.reconstruction_loss(&mut g, &p, x)?;
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Numerical(format!("encoder pretraining loss is {lv}")));
        }
        trace.push(lv);
        let grads = g.backward(loss)?;
        let mut gs = store.collect_grads(&p, &grads);
        clip_gradients(&mut gs, cfg.clip);
        opt.step(store, &gs, cfg.lr);
    }
    Ok(trace)
}
