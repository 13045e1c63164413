use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::LossMode;
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Floor applied to every log-density term.
pub const LOG_DENSITY_FLOOR: f64 = -30.0;
/// Floor on predicted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture over `T_H`-step velocity sequences: one weight per mode for the
/// whole horizon, diagonal Gaussians per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrediction {
    pub pi: Vec<f64>,
    /// `mu[m][k]`, m/s.
    pub mu: Vec<Vec<Vec2>>,
    /// `sigma[m][k]`, per-axis std, m/s.
    pub sigma: Vec<Vec<Vec2>>,
}

impl GmmPrediction {
    pub fn modes(&self) -> usize {
        self.pi.len()
    }

    pub fn horizon(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn num_scalars(&self) -> usize {
        self.modes() * self.horizon() * 4 + self.modes()
    }

    /// Builds a prediction from the raw head output of one sample:
    /// `[μx, μy, log σx, log σy]` per (mode, step), then `M` logits.
    pub fn from_raw(raw: &[f64], modes: usize, horizon: usize) -> Result<Self> {
        if raw.len() != 4 * modes * horizon + modes {
            return Err(Error::Shape {
                op: "gmm head",
                lhs: vec![raw.len()],
                rhs: vec![4 * modes * horizon + modes],
            });
        }
        let logits = &raw[4 * modes * horizon..];
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let pi = logits.iter().map(|l| (l - mx).exp() / z).collect();
        let mut mu = vec![Vec::with_capacity(horizon); modes];
        let mut sigma = vec![Vec::with_capacity(horizon); modes];
        for m in 0..modes {
            for k in 0..horizon {
                let r = &raw[(m * horizon + k) * 4..(m * horizon + k) * 4 + 4];
                mu[m].push(Vec2::new(r[0], r[1]));
                let ls = |v: f64| v.max(SIGMA_FLOOR.ln()).exp();
                sigma[m].push(Vec2::new(ls(r[2]), ls(r[3])));
            }
        }
        Ok(GmmPrediction { pi, mu, sigma })
    }

    /// Single-mode point prediction with the given spread.
    pub fn point(velocities: Vec<Vec2>, sigma: f64) -> Self {
        let s = vec![Vec2::new(sigma, sigma); velocities.len()];
        GmmPrediction {
            pi: vec![1.0],
            mu: vec![velocities],
            sigma: vec![s],
        }
    }

    /// Checks Σπ = 1, π ≥ 0, σ > 0 and consistent shapes.
    pub fn validate(&self) -> Result<()> {
        let m = self.modes();
        if m == 0 || self.mu.len() != m || self.sigma.len() != m {
            return Err(Error::Input(format!("mixture with {m} weights and {} mean sets", self.mu.len())));
        }
        let h = self.horizon();
        if self.mu.iter().chain(&self.sigma).any(|s| s.len() != h) {
            return Err(Error::Input("ragged mixture horizon".into()));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.pi.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Numerical(format!("mixture weights sum to {total}")));
        }
        let bad_sigma = self.sigma.iter().flatten().any(|s| !(s.x > 0.0 && s.y > 0.0));
        let bad_mu = self.mu.iter().flatten().any(|v| !v.is_finite());
        if bad_sigma || bad_mu {
            return Err(Error::Numerical("non-finite mean or non-positive std".into()));
        }
        Ok(())
    }

    /// Log density of `v` under mode `m` at step `k`.
    pub fn log_normal(&self, m: usize, k: usize, v: Vec2) -> f64 {
        log_normal_diag(v, self.mu[m][k], self.sigma[m][k])
    }

    /// Mixture log density of `v` at step `k`, unfloored.
    pub fn log_mixture(&self, k: usize, v: Vec2) -> f64 {
        let terms: Vec<f64> = (0..self.modes())
            .map(|m| self.pi[m].ln() + self.log_normal(m, k, v))
            .collect();
        log_sum_exp(&terms)
    }

    /// Index of the highest-weight mode; ties go to the lowest index.
    pub fn top_mode(&self) -> usize {
        let mut best = 0;
        for (m, &p) in self.pi.iter().enumerate() {
            if p > self.pi[best] {
                best = m;
            }
        }
        best
    }
}

pub fn log_normal_diag(v: Vec2, mu: Vec2, sigma: Vec2) -> f64 {
    let dx = (v.x - mu.x) / sigma.x;
    let dy = (v.y - mu.y) / sigma.y;
    -LN_2PI - sigma.x.ln() - sigma.y.ln() - 0.5 * (dx * dx + dy * dy)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Floors a log-density term, counting non-finite or floored values.
fn floored(x: f64, incidents: &mut usize) -> f64 {
    if x.is_nan() || x < LOG_DENSITY_FLOOR {
        *incidents += 1;
        LOG_DENSITY_FLOOR
    } else {
        x
    }
}

/// Reconstruction loss `L_m` of ground-truth velocities and the number of
/// floored log-density terms.
pub fn loss_reconstruction(pred: &GmmPrediction, truth: &[Vec2], mode: LossMode) -> Result<(f64, usize)> {
    check_horizon(pred, truth.len())?;
    let mut incidents = 0;
    let mut total = 0.0;
    for (k, &v) in truth.iter().enumerate() {
        match mode {
            LossMode::PerMode => {
                for m in 0..pred.modes() {
                    total -= floored(pred.pi[m].ln() + pred.log_normal(m, k, v), &mut incidents);
                }
            }
            LossMode::Mdn => total -= floored(pred.log_mixture(k, v), &mut incidents),
        }
    }
    Ok((total, incidents))
}

/// Diversity loss `L_div`: mixture negative log density of every step of
/// every generated trajectory.
pub fn loss_diversity(pred: &GmmPrediction, generated: &[Vec<Vec2>]) -> Result<(f64, usize)> {
    let mut incidents = 0;
    let mut total = 0.0;
    for traj in generated {
        check_horizon(pred, traj.len())?;
        for (k, &v) in traj.iter().enumerate() {
            total -= floored(pred.log_mixture(k, v), &mut incidents);
        }
    }
    Ok((total, incidents))
}

fn check_horizon(pred: &GmmPrediction, n: usize) -> Result<()> {
    if n != pred.horizon() {
        return Err(Error::Shape {
            op: "loss horizon",
            lhs: vec![pred.horizon()],
            rhs: vec![n],
        });
    }
    Ok(())
}

/// Closed-form `KL(N(μ_z, σ_z²) ‖ N(μ_p, σ_p²))` for diagonal Gaussians,
/// summed over dimensions.
pub fn loss_kl(mu_z: &[f64], sigma_z: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    let n = mu_z.len();
    if sigma_z.len() != n || mu_p.len() != n || sigma_p.len() != n {
        return Err(Error::Shape {
            op: "kl",
            lhs: vec![n, sigma_z.len()],
            rhs: vec![mu_p.len(), sigma_p.len()],
        });
    }
    let mut kl = 0.0;
    for i in 0..n {
        let (sz, sp) = (sigma_z[i].max(SIGMA_FLOOR), sigma_p[i].max(SIGMA_FLOOR));
        let d = mu_z[i] - mu_p[i];
        kl += (sp / sz).ln() + (sz * sz + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// KL annealing weight `max(0, tanh((step − start) / width))`.
pub fn anneal_lambda_with(step: u64, start: f64, width: f64) -> f64 {
    ((step as f64 - start) / width).tanh().max(0.0)
}

/// Annealing with the default schedule (start 10⁴, width 10³).
pub fn anneal_lambda(step: u64) -> f64 {
    anneal_lambda_with(step, 1e4, 1e3)
}

/// `L_m + λ (L_KL + β L_div)`.
pub fn loss_total(l_m: f64, l_kl: f64, l_div: f64, lambda: f64, beta: f64) -> f64 {
    l_m + lambda * (l_kl + beta * l_div)
}

/// `count` perturbed copies of a feature vector laid out as
/// `[velocity | grid | neighbors]` with the given channel widths; each
/// channel gets i.i.d. Gaussian noise of its own std.
pub fn sample_diverse_inputs(
    y: &[f64],
    widths: [usize; 3],
    sigmas: [f64; 3],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    if widths.iter().sum::<usize>() != y.len() {
        return Err(Error::Shape {
            op: "diverse inputs",
            lhs: vec![y.len()],
            rhs: widths.to_vec(),
        });
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Input(format!("perturbation stds must be >= 0, got {sigmas:?}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = y.to_vec();
        let mut off = 0;
        for (w, sd) in widths.iter().zip(sigmas) {
            if sd > 0.0 {
                for v in &mut s[off..off + w] {
                    let e: f64 = StandardNormal.sample(rng);
                    *v += sd * e;
                }
            }
            off += w;
        }
        out.push(s);
    }
    Ok(out)
}
