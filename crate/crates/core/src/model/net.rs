use std::sync::atomic::{AtomicUsize, Ordering};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{LossMode, ModelConfig, ModelKind};
use super::gmm::{LOG_DENSITY_FLOOR, SIGMA_FLOOR};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::data::{ContextBuilder, Dataset, QueryContext};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::nn::{Bound, GridAutoencoder, Linear, Lstm, LstmState, ParamStore};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Name prefix of the frozen grid autoencoder inside a model's store.
pub const ENCODER_PREFIX: &str = "grid_ae.";

#[derive(Debug, Default)]
struct Counters {
    features: AtomicUsize,
    prior: AtomicUsize,
    posterior: AtomicUsize,
    decoder: AtomicUsize,
}

/// Snapshot of the instrumented sub-network call counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CallCounts {
    pub features: usize,
    pub prior: usize,
    pub posterior: usize,
    pub decoder: usize,
}

#[derive(Debug, Clone)]
struct Layers {
    ae: GridAutoencoder,
    vel: Lstm,
    env: Lstm,
    nb: Lstm,
    phi_x: Linear,
    phi_z: Option<Linear>,
    prior: Option<(Linear, Linear)>,
    post: Option<(Linear, Linear)>,
    dec: Lstm,
    head_fc: Option<Linear>,
    head_out: Linear,
}

/// Social-VRNN, STORN or the deterministic baseline, depending on
/// `config.kind`. Parameters are stored in `f32`; every forward routine
/// is generic so the same network can be evaluated in `f64`.
#[derive(Debug)]
pub struct SocialVrnn {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    layers: Layers,
    counters: Counters,
}

impl Clone for SocialVrnn {
    fn clone(&self) -> Self {
        SocialVrnn {
            config: self.config.clone(),
            params: self.params.clone(),
            layers: self.layers.clone(),
            counters: Counters::default(),
        }
    }
}

/// Model input for one context, independent of the scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `T_O + 1` velocities, oldest first.
    pub vel: Vec<Vec2>,
    /// `(rel x, rel y, rel vx, rel vy)`, fed in this order.
    pub nb: Vec<[f64; 4]>,
    /// Grid autoencoder code.
    pub code: Vec<f64>,
    /// `T_H` ground-truth velocities; empty at inference.
    pub future: Vec<Vec2>,
}

/// One unrolled step of a training batch.
#[derive(Debug, Clone)]
pub struct StepBatch<T> {
    pub size: usize,
    vel: Vec<Tensor<T>>,
    code: Tensor<T>,
    nb: Vec<(Tensor<T>, Tensor<T>, Tensor<T>)>,
    truth: Tensor<T>,
    /// Reparametrization noise `[B, latent]`.
    pub eps: Tensor<T>,
    /// Feature perturbations for the diversity loss, `M × [B, F]`.
    pub noise: Vec<Tensor<T>>,
}

/// `t_trunc` consecutive steps for a batch of windows.
#[derive(Debug, Clone)]
pub struct WindowBatch<T> {
    pub steps: Vec<StepBatch<T>>,
}

/// Loss settings for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub mode: LossMode,
    pub lambda: f64,
    pub beta: f64,
    pub lambda_reg: f64,
}

/// Graph loss plus per-term values averaged over the unrolled steps.
#[derive(Debug, Clone)]
pub struct WindowLoss<T> {
    pub total: Var,
    pub l_m: f64,
    pub l_kl: f64,
    pub l_div: f64,
    pub incidents: usize,
    /// Generated diversity targets per step, `[B, M, T_H, 2]` flattened.
    pub targets: Vec<Tensor<T>>,
}

/// Output of one decoder evaluation.
struct Decoded {
    raw: Var,
    state: LstmState,
}

fn split_halves<T: Real>(g: &mut Graph<T>, x: Var, w: usize) -> Result<(Var, Var)> {
    let mu = g.slice(x, 0, w)?;
    let ls = g.slice(x, w, 2 * w)?;
    Ok((mu, g.clamp_min(ls, SIGMA_FLOOR.ln())))
}

fn ones<T: Real>(g: &mut Graph<T>, n: usize) -> Var {
    g.constant(Tensor::full(&[n, 1], T::one()))
}

impl SocialVrnn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let ae = GridAutoencoder::new(&mut s, ENCODER_PREFIX, c.grid.rows, c.grid.cols, c.enc_feat, &mut rng);
        s.set_trainable(ENCODER_PREFIX, false);
        let vel = Lstm::new(&mut s, "vel", 2, c.feat_v, &mut rng);
        let env = Lstm::new(&mut s, "env", c.enc_feat, c.feat_env, &mut rng);
        let nb = Lstm::new(&mut s, "nb", 4, c.feat_nb, &mut rng);
        let phi_x = Linear::new(&mut s, "phi_x", c.feature_size(), c.latent, &mut rng);
        let layers = if c.kind == ModelKind::Deterministic {
            let dec = Lstm::new(&mut s, "dec", c.latent, c.hidden, &mut rng);
            let head_out = Linear::new(&mut s, "head.out", c.hidden, c.head_size(), &mut rng);
            Layers { ae, vel, env, nb, phi_x, phi_z: None, prior: None, post: None, dec, head_fc: None, head_out }
        } else {
            let phi_z = Linear::new(&mut s, "phi_z", c.latent, c.latent, &mut rng);
            let prior = (c.kind == ModelKind::SocialVrnn).then(|| {
                (
                    Linear::new(&mut s, "prior.fc", c.hidden, c.prior, &mut rng),
                    Linear::new(&mut s, "prior.out", c.prior, 2 * c.latent, &mut rng),
                )
            });
            let post = (
                Linear::new(&mut s, "post.fc", c.latent + c.hidden, c.prior, &mut rng),
                Linear::new(&mut s, "post.out", c.prior, 2 * c.latent, &mut rng),
            );
            let dec = Lstm::new(&mut s, "dec", 2 * c.latent, c.hidden, &mut rng);
            let head_fc = Linear::new(&mut s, "head.fc", c.hidden, c.hidden, &mut rng);
            let head_out = Linear::new(&mut s, "head.out", c.hidden, c.head_size(), &mut rng);
            Layers {
                ae,
                vel,
                env,
                nb,
                phi_x,
                phi_z: Some(phi_z),
                prior,
                post: Some(post),
                dec,
                head_fc: Some(head_fc),
                head_out,
            }
        };
        Ok(SocialVrnn {
            config,
            params: s,
            layers,
            counters: Counters::default(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn encoder(&self) -> &GridAutoencoder {
        &self.layers.ae
    }

    pub fn call_counts(&self) -> CallCounts {
        let c = &self.counters;
        CallCounts {
            features: c.features.load(Ordering::Relaxed),
            prior: c.prior.load(Ordering::Relaxed),
            posterior: c.posterior.load(Ordering::Relaxed),
            decoder: c.decoder.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        for c in [&self.counters.features, &self.counters.prior, &self.counters.posterior, &self.counters.decoder] {
            c.store(0, Ordering::Relaxed);
        }
    }

    /// Copies the grid encoder weights from a pretrained autoencoder store
    /// (names `enc.*`/`dec.*` with an optional prefix).
    pub fn load_encoder(&mut self, ae_params: &ParamStore<f32>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for id in ae_params.ids() {
            let name = ae_params.name(id);
            let Some(rest) = name.strip_prefix(prefix) else { continue };
            self.params.assign(&format!("{ENCODER_PREFIX}{rest}"), ae_params.get(id).clone())?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Checkpoint("no grid-encoder parameters found".into()));
        }
        Ok(n)
    }

    /// Model inputs for `contexts`, with `futures` as targets when given.
    pub fn samples(&self, contexts: &[&QueryContext], futures: Option<&[Vec<Vec2>]>) -> Result<Vec<Sample>> {
        let c = &self.config;
        for ctx in contexts {
            if ctx.past_velocities.len() != c.t_obs + 1 {
                return Err(Error::Shape {
                    op: "context history",
                    lhs: vec![ctx.past_velocities.len()],
                    rhs: vec![c.t_obs + 1],
                });
            }
        }
        let mut codes = Vec::with_capacity(contexts.len());
        for chunk in contexts.chunks(256) {
            let grids: Vec<_> = chunk.iter().map(|ctx| &ctx.grid).collect();
            let t = self.layers.ae.features(&self.params, &grids)?;
            codes.extend(t.data().chunks(c.enc_feat).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
        }
        contexts
            .iter()
            .zip(codes)
            .enumerate()
            .map(|(i, (ctx, code))| {
                let future = futures.map(|f| f[i].clone()).unwrap_or_default();
                if futures.is_some() && future.len() != c.t_pred {
                    return Err(Error::Shape {
                        op: "future velocities",
                        lhs: vec![future.len()],
                        rhs: vec![c.t_pred],
                    });
                }
                Ok(Sample {
                    vel: ctx.past_velocities.clone(),
                    nb: ctx
                        .neighbors
                        .iter()
                        .map(|n| [n.rel_position.x, n.rel_position.y, n.rel_velocity.x, n.rel_velocity.y])
                        .collect(),
                    code,
                    future,
                })
            })
            .collect()
    }

    /// Stacks samples into tensors. `eps` and `noise` are drawn from `rng`
    /// when given, zero otherwise.
    pub fn step_batch<T: Real>(
        &self,
        samples: &[&Sample],
        sigmas: [f64; 3],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepBatch<T>> {
        let c = &self.config;
        let b = samples.len();
        if b == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let vel = (0..=c.t_obs)
            .map(|k| {
                let d: Vec<f64> = samples.iter().flat_map(|s| [s.vel[k].x, s.vel[k].y]).collect();
                Tensor::from_f64(&[b, 2], &d)
            })
            .collect::<Result<Vec<_>>>()?;
        let code_data: Vec<f64> = samples.iter().flat_map(|s| s.code.iter().copied()).collect();
        let code = Tensor::from_f64(&[b, c.enc_feat], &code_data)?;
        let n_max = samples.iter().map(|s| s.nb.len()).max().unwrap_or(0);
        let mut nb = Vec::with_capacity(n_max);
        for j in 0..n_max {
            let mut x = Vec::with_capacity(4 * b);
            let mut mask = Vec::with_capacity(c.feat_nb * b);
            for s in samples {
                // Right-aligned so every row ends with its closest neighbor.
                let lead = n_max - s.nb.len();
                let on = j >= lead;
                x.extend(if on { s.nb[j - lead] } else { [0.0; 4] });
                mask.extend(std::iter::repeat_n(if on { 1.0 } else { 0.0 }, c.feat_nb));
            }
            let inv: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
            nb.push((
                Tensor::from_f64(&[b, 4], &x)?,
                Tensor::from_f64(&[b, c.feat_nb], &mask)?,
                Tensor::from_f64(&[b, c.feat_nb], &inv)?,
            ));
        }
        let has_truth = samples.iter().all(|s| s.future.len() == c.t_pred);
        let truth = if has_truth {
            let d: Vec<f64> = samples.iter().flat_map(|s| s.future.iter().flat_map(|v| [v.x, v.y])).collect();
            Tensor::from_f64(&[b, 2 * c.t_pred], &d)?
        } else {
            Tensor::zeros(&[0])
        };
        let f = c.feature_size();
        let (eps, noise) = match rng {
            Some(rng) => {
                let eps: Vec<f64> = (0..b * c.latent).map(|_| StandardNormal.sample(&mut *rng)).collect();
                let widths = [c.feat_v, c.feat_env, c.feat_nb];
                let noise = (0..c.modes)
                    .map(|_| {
                        let mut d = Vec::with_capacity(b * f);
                        for _ in 0..b {
                            for (w, sd) in widths.iter().zip(sigmas) {
                                for _ in 0..*w {
                                    let e: f64 = if sd > 0.0 { StandardNormal.sample(&mut *rng) } else { 0.0 };
                                    d.push(sd * e);
                                }
                            }
                        }
                        Tensor::from_f64(&[b, f], &d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Tensor::from_f64(&[b, c.latent], &eps)?, noise)
            }
            None => (Tensor::zeros(&[b, c.latent]), Vec::new()),
        };
        Ok(StepBatch { size: b, vel, code, nb, truth, eps, noise })
    }

    /// Three-channel feature vector `[B, F]`.
    pub fn extract_features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: &StepBatch<T>) -> Result<Var> {
        self.counters.features.fetch_add(1, Ordering::Relaxed);
        let l = &self.layers;
        let b = x.size;
        let mut sv = l.vel.zero_state(g, b);
        for v in &x.vel {
            let xv = g.constant(v.clone());
            sv = l.vel.step(g, p, xv, sv)?;
        }
        let se = l.env.zero_state(g, b);
        let code = g.constant(x.code.clone());
        let se = l.env.step(g, p, code, se)?;
        let mut sn = l.nb.zero_state(g, b);
        for (xn, mask, inv) in &x.nb {
            let xn = g.constant(xn.clone());
            let mask = g.constant(mask.clone());
            let inv = g.constant(inv.clone());
            sn = l.nb.step_masked(g, p, xn, sn, mask, inv)?;
        }
        g.concat(&[sv.h, se.h, sn.h])
    }

    fn phi_x<T: Real>(&self, g: &mut Graph<T>, p: &Bound, y: Var) -> Result<Var> {
        let px = self.layers.phi_x.forward(g, p, y)?;
        Ok(g.relu(px))
    }

    /// `(μ_prior, log σ_prior)`; STORN returns the constant standard normal.
    pub fn prior_net<T: Real>(&self, g: &mut Graph<T>, p: &Bound, h: Var) -> Result<(Var, Var)> {
        self.counters.prior.fetch_add(1, Ordering::Relaxed);
        let b = g.shape(h)[0];
        let w = self.config.latent;
        match &self.layers.prior {
            Some((fc, out)) => {
                let a = fc.forward(g, p, h)?;
                let a = g.relu(a);
                let o = out.forward(g, p, a)?;
                split_halves(g, o, w)
            }
            None => Ok((g.constant(Tensor::zeros(&[b, w])), g.constant(Tensor::zeros(&[b, w])))),
        }
    }

    /// `(μ_z, log σ_z)` from `ψ^x(y)` and the previous decoder state.
    fn posterior_net<T: Real>(&self, g: &mut Graph<T>, p: &Bound, px: Var, h: Var) -> Result<(Var, Var)> {
        self.counters.posterior.fetch_add(1, Ordering::Relaxed);
        let (fc, out) = self.layers.post.as_ref().ok_or_else(|| Error::Input("model has no latent".into()))?;
        let a = g.concat(&[px, h])?;
        let a = fc.forward(g, p, a)?;
        let a = g.relu(a);
        let o = out.forward(g, p, a)?;
        split_halves(g, o, self.config.latent)
    }

    /// Posterior on features `y`, exposed for verification.
    pub fn encoder_net<T: Real>(&self, g: &mut Graph<T>, p: &Bound, y: Var, h: Var) -> Result<(Var, Var)> {
        let px = self.phi_x(g, p, y)?;
        self.posterior_net(g, p, px, h)
    }

    fn decode_px<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Option<Var>, px: Var, s: LstmState) -> Result<Decoded> {
        self.counters.decoder.fetch_add(1, Ordering::Relaxed);
        let l = &self.layers;
        let inp = match (z, &l.phi_z) {
            (Some(z), Some(phi_z)) => {
                let pz = phi_z.forward(g, p, z)?;
                let pz = g.relu(pz);
                g.concat(&[pz, px])?
            }
            (None, None) => px,
            _ => return Err(Error::Input("latent does not match model kind".into())),
        };
        let state = l.dec.step(g, p, inp, s)?;
        let mut hh = state.h;
        if let Some(fc) = &l.head_fc {
            let a = fc.forward(g, p, hh)?;
            hh = g.elu(a);
        }
        let raw = l.head_out.forward(g, p, hh)?;
        Ok(Decoded { raw, state })
    }

    /// One decoder step on latent `z` and features `y`: raw head output
    /// `[B, head_size]` and the new decoder state.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        z: Option<Var>,
        y: Var,
        s: LstmState,
    ) -> Result<(Var, LstmState)> {
        let px = self.phi_x(g, p, y)?;
        let d = self.decode_px(g, p, z, px, s)?;
        Ok((d.raw, d.state))
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<T>, batch: usize) -> LstmState {
        self.layers.dec.zero_state(g, batch)
    }

    /// Full training loss over the unrolled steps of `batch`. With
    /// `targets` given, the diversity targets are taken from it instead of
    /// being generated.
    pub fn window_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        batch: &WindowBatch<T>,
        opts: &LossOptions,
        targets: Option<&[Tensor<T>]>,
    ) -> Result<WindowLoss<T>> {
        let c = &self.config;
        let n = batch.steps.len();
        if n == 0 {
            return Err(Error::Input("window batch without steps".into()));
        }
        let b = batch.steps[0].size;
        let mut state = self.zero_state(g, b);
        let mut total: Option<Var> = None;
        let (mut sm, mut skl, mut sdiv, mut incidents) = (0.0, 0.0, 0.0, 0);
        let mut generated = Vec::with_capacity(n);
        for (si, x) in batch.steps.iter().enumerate() {
            if x.truth.is_empty() {
                return Err(Error::Input("training batch without targets".into()));
            }
            let y = self.extract_features(g, p, x)?;
            let px = self.phi_x(g, p, y)?;
            let truth = g.constant(x.truth.clone());
            let step_loss = if c.kind == ModelKind::Deterministic {
                let d = self.decode_px(g, p, None, px, state)?;
                state = d.state;
                let l = mean_displacement(g, d.raw, truth, b, c.t_pred)?;
                sm += g.value(l).item().as_f64();
                l
            } else {
                let (mu_p, ls_p) = self.prior_net(g, p, state.h)?;
                let (mu_z, ls_z) = self.posterior_net(g, p, px, state.h)?;
                let eps = g.constant(x.eps.clone());
                let sz = g.exp(ls_z);
                let noise = g.mul(sz, eps)?;
                let z = g.add(mu_z, noise)?;
                let h_prev = state;
                let d = self.decode_px(g, p, Some(z), px, state)?;
                state = d.state;
                let parts = head_parts(g, d.raw, b, c.modes, c.t_pred)?;

                let truth4 = g.value(truth).clone();
                let (lm, inc) = mixture_loss(g, &parts, &truth4, 1, opts.mode)?;
                incidents += inc;
                let kl = kl_graph(g, mu_z, ls_z, mu_p, ls_p, b)?;

                let tg = match targets {
                    Some(t) => t[si].clone(),
                    None => self.diversity_targets(g, p, y, z, h_prev, x)?,
                };
                let (ldiv, inc) = mixture_loss(g, &parts, &tg, c.modes, LossMode::Mdn)?;
                incidents += inc;
                generated.push(tg);

                sm += g.value(lm).item().as_f64();
                skl += g.value(kl).item().as_f64();
                sdiv += g.value(ldiv).item().as_f64();
                let w_div = g.scale(ldiv, opts.beta);
                let reg = g.add(kl, w_div)?;
                let reg = g.scale(reg, opts.lambda);
                g.add(lm, reg)?
            };
            total = Some(match total {
                None => step_loss,
                Some(t) => g.add(t, step_loss)?,
            });
        }
        let mut total = g.scale(total.unwrap(), 1.0 / n as f64);
        if c.kind == ModelKind::Deterministic && opts.lambda_reg > 0.0 {
            let mut reg: Option<Var> = None;
            for id in self.params.ids() {
                if !self.params.is_trainable(id) {
                    continue;
                }
                let sq = g.square(p.var(id));
                let s = g.sum(sq);
                reg = Some(match reg {
                    None => s,
                    Some(r) => g.add(r, s)?,
                });
            }
            if let Some(r) = reg {
                let r = g.scale(r, opts.lambda_reg);
                total = g.add(total, r)?;
            }
        }
        let k = n as f64;
        Ok(WindowLoss {
            total,
            l_m: sm / k,
            l_kl: skl / k,
            l_div: sdiv / k,
            incidents,
            targets: generated,
        })
    }

    /// Highest-weight mode means decoded from perturbed features with the
    /// same latent and decoder state, as constants `[B, M, T_H, 2]`.
    fn diversity_targets<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        y: Var,
        z: Var,
        h_prev: LstmState,
        x: &StepBatch<T>,
    ) -> Result<Tensor<T>> {
        let c = &self.config;
        let b = x.size;
        let zc = g.constant(g.value(z).clone());
        let hc = LstmState {
            h: g.constant(g.value(h_prev.h).clone()),
            c: g.constant(g.value(h_prev.c).clone()),
        };
        let yv = g.value(y).clone();
        let mut out = vec![T::zero(); b * c.modes * c.t_pred * 2];
        for (j, noise) in x.noise.iter().enumerate() {
            let data: Vec<T> = yv.data().iter().zip(noise.data()).map(|(&a, &n)| a + n).collect();
            let yj = g.constant(Tensor::new(yv.shape(), data)?);
            let px = self.phi_x(g, p, yj)?;
            let d = self.decode_px(g, p, Some(zc), px, hc)?;
            let raw = g.value(d.raw);
            let hs = c.head_size();
            for bi in 0..b {
                let row = &raw.data()[bi * hs..(bi + 1) * hs];
                let logits = &row[4 * c.modes * c.t_pred..];
                let mut top = 0;
                for m in 1..c.modes {
                    if logits[m] > logits[top] {
                        top = m;
                    }
                }
                for k in 0..c.t_pred {
                    let src = (top * c.t_pred + k) * 4;
                    let dst = ((bi * c.modes + j) * c.t_pred + k) * 2;
                    out[dst] = row[src];
                    out[dst + 1] = row[src + 1];
                }
            }
        }
        Tensor::new(&[b, c.modes * c.t_pred * 2], out)
    }
}

/// Mixture head split into means `[B·M·T, 2]`, log-stds `[B·M·T, 2]` and
/// log weights `[B, M]`.
struct HeadParts {
    mu: Var,
    ls: Var,
    logpi: Var,
    b: usize,
    m: usize,
    t: usize,
}

fn head_parts<T: Real>(g: &mut Graph<T>, raw: Var, b: usize, m: usize, t: usize) -> Result<HeadParts> {
    let body = g.slice(raw, 0, 4 * m * t)?;
    let body = g.reshape(body, &[b * m * t, 4])?;
    let mu = g.slice(body, 0, 2)?;
    let ls = g.slice(body, 2, 4)?;
    let ls = g.clamp_min(ls, SIGMA_FLOOR.ln());
    let logits = g.slice(raw, 4 * m * t, 4 * m * t + m)?;
    let logpi = g.log_softmax(logits);
    Ok(HeadParts { mu, ls, logpi, b, m, t })
}

/// Negative log-likelihood of `targets` (`[B, J·T·2]`, J sequences per
/// row) under the mixture, averaged over the batch. `PerMode` sums
/// `−log(π_m N)` over modes, `Mdn` takes `−log Σ_m π_m N`. Returns the
/// loss and the number of floored terms.
fn mixture_loss<T: Real>(
    g: &mut Graph<T>,
    hp: &HeadParts,
    targets: &Tensor<T>,
    j: usize,
    mode: LossMode,
) -> Result<(Var, usize)> {
    let (b, m, t) = (hp.b, hp.m, hp.t);
    let rows = b * j * t * m;
    let mut idx2 = Vec::with_capacity(rows * 2);
    let mut idx_pi = Vec::with_capacity(rows);
    let mut tgt = Vec::with_capacity(rows * 2);
    let td = targets.data();
    for bi in 0..b {
        for ji in 0..j {
            for k in 0..t {
                let src = ((bi * j + ji) * t + k) * 2;
                for mi in 0..m {
                    let r = (bi * m + mi) * t + k;
                    idx2.extend([2 * r, 2 * r + 1]);
                    idx_pi.push(bi * m + mi);
                    tgt.extend([td[src], td[src + 1]]);
                }
            }
        }
    }
    let flat = |g: &mut Graph<T>, v: Var| -> Result<Var> {
        let n = g.value(v).len();
        g.reshape(v, &[1, n])
    };
    let mu = flat(g, hp.mu)?;
    let mu = g.gather(mu, &idx2)?;
    let mu = g.reshape(mu, &[rows, 2])?;
    let ls = flat(g, hp.ls)?;
    let ls = g.gather(ls, &idx2)?;
    let ls = g.reshape(ls, &[rows, 2])?;
    let lp = flat(g, hp.logpi)?;
    let lp = g.gather(lp, &idx_pi)?;
    let lp = g.reshape(lp, &[b * j * t, m])?;
    let v = g.constant(Tensor::new(&[rows, 2], tgt)?);

    let d = g.sub(v, mu)?;
    let nls = g.neg(ls);
    let inv = g.exp(nls);
    let d = g.mul(d, inv)?;
    let q = g.square(d);
    let one2 = ones(g, 2);
    let q = g.matmul(q, one2)?;
    let lsum = g.matmul(ls, one2)?;
    let q = g.scale(q, -0.5);
    let logn = g.sub(q, lsum)?;
    let logn = g.add_scalar(logn, -LN_2PI);
    let logn = g.reshape(logn, &[b * j * t, m])?;
    let terms = g.add(logn, lp)?;
    let terms = match mode {
        LossMode::PerMode => terms,
        LossMode::Mdn => g.logsumexp(terms),
    };
    let incidents = g
        .value(terms)
        .data()
        .iter()
        .filter(|v| v.is_nan() || v.as_f64() < LOG_DENSITY_FLOOR)
        .count();
    let terms = g.clamp_min(terms, LOG_DENSITY_FLOOR);
    let s = g.sum(terms);
    Ok((g.scale(s, -1.0 / b as f64), incidents))
}

/// Diagonal Gaussian KL summed over dimensions, averaged over the batch.
fn kl_graph<T: Real>(g: &mut Graph<T>, mu_z: Var, ls_z: Var, mu_p: Var, ls_p: Var, b: usize) -> Result<Var> {
    let d = g.sub(mu_z, mu_p)?;
    let d2 = g.square(d);
    let two_lz = g.scale(ls_z, 2.0);
    let vz = g.exp(two_lz);
    let num = g.add(vz, d2)?;
    let m2lp = g.scale(ls_p, -2.0);
    let inv_vp = g.exp(m2lp);
    let ratio = g.mul(num, inv_vp)?;
    let ratio = g.scale(ratio, 0.5);
    let dl = g.sub(ls_p, ls_z)?;
    let k = g.add(dl, ratio)?;
    let k = g.add_scalar(k, -0.5);
    let s = g.sum(k);
    Ok(g.scale(s, 1.0 / b as f64))
}

/// `(1/T) Σ_k ‖v̂_k − v_k‖`, averaged over the batch.
fn mean_displacement<T: Real>(g: &mut Graph<T>, pred: Var, truth: Var, b: usize, t: usize) -> Result<Var> {
    let d = g.sub(pred, truth)?;
    let d = g.reshape(d, &[b * t, 2])?;
    let q = g.square(d);
    let one2 = ones(g, 2);
    let q = g.matmul(q, one2)?;
    let q = g.add_scalar(q, 1e-12);
    let lq = g.log(q);
    let lq = g.scale(lq, 0.5);
    let norm = g.exp(lq);
    let s = g.sum(norm);
    Ok(g.scale(s, 1.0 / (b * t) as f64))
}

/// `(agent, last context step)` pairs usable for training: the track
/// covers `T_O` history before the first unrolled step and `T_H` steps
/// after the last. Window ends advance by `T_O`.
pub fn training_windows(ds: &Dataset, t_obs: usize, t_pred: usize, t_trunc: usize, split: Option<crate::data::Split>) -> Vec<(u32, i64)> {
    let mut out = Vec::new();
    for tr in &ds.trajectories {
        if split.is_some_and(|s| tr.split != s) {
            continue;
        }
        let mut t = tr.start_step() + (t_obs + t_trunc) as i64 - 1;
        while t + t_pred as i64 <= tr.end_step() {
            out.push((tr.agent_id, t));
            t += t_obs.max(1) as i64;
        }
    }
    out
}

/// Samples for every unrolled step of every window, `[window][step]`.
pub fn window_samples(
    model: &SocialVrnn,
    ds: &Dataset,
    windows: &[(u32, i64)],
    t_trunc: usize,
) -> Result<Vec<Vec<Sample>>> {
    let c = &model.config;
    let builder = ContextBuilder::new(ds, c.t_obs, c.grid);
    let mut ctxs = Vec::with_capacity(windows.len() * t_trunc);
    let mut futs = Vec::with_capacity(windows.len() * t_trunc);
    for &(id, t) in windows {
        let tr = ds.trajectory(id).ok_or_else(|| Error::Lookup(format!("agent {id} not in dataset")))?;
        for s in t + 1 - t_trunc as i64..=t {
            ctxs.push(builder.build(id, s)?);
            let fut = (s + 1..=s + c.t_pred as i64)
                .map(|k| {
                    tr.at_step(k)
                        .map(|st| st.velocity)
                        .ok_or_else(|| Error::Range(format!("agent {id} has no step {k}")))
                })
                .collect::<Result<Vec<_>>>()?;
            futs.push(fut);
        }
    }
    let refs: Vec<&QueryContext> = ctxs.iter().collect();
    let flat = model.samples(&refs, Some(&futs))?;
    let mut out = Vec::with_capacity(windows.len());
    let mut it = flat.into_iter();
    for _ in windows {
        out.push(it.by_ref().take(t_trunc).collect());
    }
    Ok(out)
}

/// Batch of the given windows with fresh noise from `rng`.
pub fn window_batch<T: Real>(
    model: &SocialVrnn,
    samples: &[&Vec<Sample>],
    sigmas: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<WindowBatch<T>> {
    let n = samples.first().map_or(0, |s| s.len());
    let steps = (0..n)
        .map(|s| {
            let col: Vec<&Sample> = samples.iter().map(|w| &w[s]).collect();
            model.step_batch(&col, sigmas, Some(&mut *rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowBatch { steps })
}

