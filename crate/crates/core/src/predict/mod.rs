//! One-shot inference and linear propagation of velocity uncertainty to
//! positions.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Tensor};
use crate::data::QueryContext;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::model::{GmmPrediction, ModelKind, SocialVrnn, SIGMA_FLOOR};

/// How the latent is drawn from the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// `z = μ_prior`.
    #[default]
    PriorMean,
    /// `z = μ_prior + σ_prior ⊙ ε` with `ε` from the seed.
    PriorSample(u64),
    /// `z = μ_z` from the inference network, which sees the same past
    /// features and decoder state as the prior.
    PosteriorMean,
}

/// Position distribution per mode: means and diagonal covariances for
/// steps `1..=T_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionPrediction {
    pub pi: Vec<f64>,
    /// `mean[m][k]`, m.
    pub mean: Vec<Vec<Vec2>>,
    /// `var[m][k]`, per-axis variance, m².
    pub var: Vec<Vec<Vec2>>,
}

impl PositionPrediction {
    pub fn modes(&self) -> usize {
        self.pi.len()
    }
}

/// Predicts for one context with a single feature, prior and decoder
/// evaluation.
pub fn predict_one_shot(model: &SocialVrnn, ctx: &QueryContext, mode: SampleMode) -> Result<GmmPrediction> {
    Ok(predict_batch(model, &[ctx], mode)?.remove(0))
}

/// Batched [`predict_one_shot`]: the sub-networks run once on the whole batch.
pub fn predict_batch(model: &SocialVrnn, ctxs: &[&QueryContext], mode: SampleMode) -> Result<Vec<GmmPrediction>> {
    let c = &model.config;
    let samples = model.samples(ctxs, None)?;
    let refs: Vec<_> = samples.iter().collect();
    let batch = model.step_batch::<f32>(&refs, [0.0; 3], None)?;
    let b = batch.size;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let y = model.extract_features(&mut g, &p, &batch)?;
    let state = model.zero_state(&mut g, b);
    let z = if c.kind == ModelKind::Deterministic {
        None
    } else if mode == SampleMode::PosteriorMean {
        Some(model.encoder_net(&mut g, &p, y, state.h)?.0)
    } else {
        let (mu, ls) = model.prior_net(&mut g, &p, state.h)?;
        Some(match mode {
            SampleMode::PriorMean | SampleMode::PosteriorMean => mu,
            SampleMode::PriorSample(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let eps: Vec<f64> = (0..b * c.latent).map(|_| StandardNormal.sample(&mut rng)).collect();
                let eps = g.constant(Tensor::from_f64(&[b, c.latent], &eps)?);
                let s = g.exp(ls);
                let n = g.mul(s, eps)?;
                g.add(mu, n)?
            }
        })
    };
    let (raw, _) = model.decode(&mut g, &p, z, y, state)?;
    let raw = g.value(raw).to_f64_vec();
    let hs = c.head_size();
    raw.chunks(hs)
        .map(|row| {
            if c.kind == ModelKind::Deterministic {
                let v = row.chunks(2).map(|q| Vec2::new(q[0], q[1])).collect();
                Ok(GmmPrediction::point(v, SIGMA_FLOOR))
            } else {
                GmmPrediction::from_raw(row, c.modes, c.t_pred)
            }
        })
        .collect()
}

/// `μ^x_{k+1} = μ^x_k + μ^v_k δt`, `Σ^x_{k+1} = Σ^x_k + Σ^v_k δt²` per mode,
/// starting from `p0` with diagonal covariance `var0`.
pub fn propagate_uncertainty(pred: &GmmPrediction, p0: Vec2, var0: Vec2, dt: f64) -> Result<PositionPrediction> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("propagation step must be > 0, got {dt}")));
    }
    if !(var0.x >= 0.0 && var0.y >= 0.0) {
        return Err(Error::Input(format!("initial covariance must be >= 0, got {var0:?}")));
    }
    let mut mean = Vec::with_capacity(pred.modes());
    let mut var = Vec::with_capacity(pred.modes());
    for m in 0..pred.modes() {
        let (mut x, mut s) = (p0, var0);
        let mut mm = Vec::with_capacity(pred.horizon());
        let mut vv = Vec::with_capacity(pred.horizon());
        for k in 0..pred.horizon() {
            let sd = pred.sigma[m][k];
            x += pred.mu[m][k] * dt;
            s += Vec2::new(sd.x * sd.x, sd.y * sd.y) * (dt * dt);
            mm.push(x);
            vv.push(s);
        }
        mean.push(mm);
        var.push(vv);
    }
    Ok(PositionPrediction {
        pi: pred.pi.clone(),
        mean,
        var,
    })
}

/// Text report: for each mode its weight, then velocity and position rows
/// `k μx μy σx² σy²`.
pub fn format_prediction(pred: &GmmPrediction, pos: &PositionPrediction) -> String {
    let mut s = String::new();
    for m in 0..pred.modes() {
        let _ = writeln!(s, "mode {m} pi {}", pred.pi[m]);
        let _ = writeln!(s, "velocity");
        for k in 0..pred.horizon() {
            let (mu, sd) = (pred.mu[m][k], pred.sigma[m][k]);
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", k + 1, mu.x, mu.y, sd.x * sd.x, sd.y * sd.y);
        }
        let _ = writeln!(s, "position");
        for k in 0..pos.mean[m].len() {
            let (mu, v) = (pos.mean[m][k], pos.var[m][k]);
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", k + 1, mu.x, mu.y, v.x, v.y);
        }
    }
    s
}

/// Gnuplot-friendly blocks, one per mode, starting at `p0`: `x y pi`.
pub fn gnuplot_dump(pos: &PositionPrediction, p0: Vec2) -> String {
    let mut s = String::new();
    for m in 0..pos.modes() {
        let _ = writeln!(s, "# mode {m}");
        let _ = writeln!(s, "{} {} {}", p0.x, p0.y, pos.pi[m]);
        for p in &pos.mean[m] {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, pos.pi[m]);
        }
        s.push_str("\n\n");
    }
    s
}
