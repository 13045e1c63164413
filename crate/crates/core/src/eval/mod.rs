//! Displacement metrics, predictive NLL, mode diversity and the
//! evaluation harness.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{ContextBuilder, Dataset, GridConfig, QueryContext, Split};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::model::{GmmPrediction, SocialVrnn, LOG_DENSITY_FLOOR};
use crate::predict::{predict_batch, propagate_uncertainty, PositionPrediction, SampleMode};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape {
            op: "displacement metric",
            lhs: vec![a],
            rhs: vec![b],
        });
    }
    Ok(())
}

/// Average displacement error, m.
pub fn ade(pred: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).sum::<f64>() / pred.len() as f64)
}

/// Final displacement error, m.
pub fn fde(pred: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    Ok(pred.last().unwrap().distance(*truth.last().unwrap()))
}

/// Smallest `metric` over the mode means and the mode that attains it;
/// ties go to the lowest index.
pub fn min_over_modes(
    metric: impl Fn(&[Vec2], &[Vec2]) -> Result<f64>,
    pred: &PositionPrediction,
    truth: &[Vec2],
) -> Result<(f64, usize)> {
    if pred.modes() == 0 {
        return Err(Error::Input("prediction without modes".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (m, mean) in pred.mean.iter().enumerate() {
        let v = metric(mean, truth)?;
        if v < best.0 {
            best = (v, m);
        }
    }
    Ok(best)
}

/// `Σ_k −log Σ_m π_m N(v_k; μ_mk, σ_mk)` with each step's log density
/// floored like the training losses.
pub fn predictive_nll(pred: &GmmPrediction, truth: &[Vec2]) -> Result<f64> {
    check_len(pred.horizon(), truth.len())?;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let l = pred.log_mixture(k, v);
            -(if l.is_nan() { LOG_DENSITY_FLOOR } else { l.max(LOG_DENSITY_FLOOR) })
        })
        .sum())
}

/// 2-Wasserstein distance between diagonal Gaussians:
/// `sqrt(‖μ₁ − μ₂‖² + Σ (σ₁ − σ₂)²)`.
pub fn w2_diag_gauss(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    if s1.len() != n || mu2.len() != n || s2.len() != n {
        return Err(Error::Shape {
            op: "w2",
            lhs: vec![mu1.len(), s1.len()],
            rhs: vec![mu2.len(), s2.len()],
        });
    }
    if s1.iter().chain(s2).any(|s| !(*s >= 0.0)) {
        return Err(Error::Input("w2 needs non-negative standard deviations".into()));
    }
    let mut d = 0.0;
    for i in 0..n {
        d += (mu1[i] - mu2[i]).powi(2) + (s1[i] - s2[i]).powi(2);
    }
    Ok(d.sqrt())
}

/// Mean W₂ over mode pairs of the position distributions, each mode
/// taken as one Gaussian over the stacked horizon. Zero for one mode.
pub fn mean_pairwise_w2(pos: &PositionPrediction) -> f64 {
    let flat = |m: usize| -> (Vec<f64>, Vec<f64>) {
        let mu = pos.mean[m].iter().flat_map(|p| [p.x, p.y]).collect();
        let sd = pos.var[m].iter().flat_map(|v| [v.x.sqrt(), v.y.sqrt()]).collect();
        (mu, sd)
    };
    let m = pos.modes();
    let (mut total, mut n) = (0.0, 0);
    for a in 0..m {
        for b in a + 1..m {
            let ((ma, sa), (mb, sb)) = (flat(a), flat(b));
            total += w2_diag_gauss(&ma, &sa, &mb, &sb).expect("equal horizons");
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Anything that turns query contexts into velocity mixtures.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, ctxs: &[&QueryContext]) -> Result<Vec<GmmPrediction>>;
}

impl Predictor for SocialVrnn {
    fn name(&self) -> String {
        self.kind().name().to_string()
    }

    fn predict(&self, ctxs: &[&QueryContext]) -> Result<Vec<GmmPrediction>> {
        predict_batch(self, ctxs, SampleMode::PriorMean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub grid: GridConfig,
    /// Spacing of evaluation windows, steps.
    pub stride: usize,
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_obs: 8,
            t_pred: 12,
            grid: GridConfig::default(),
            stride: 8,
            split: Split::Test,
        }
    }
}

impl EvalConfig {
    /// Window geometry of `model`, other settings default.
    pub fn for_model(model: &SocialVrnn) -> Self {
        EvalConfig {
            t_obs: model.config.t_obs,
            t_pred: model.config.t_pred,
            grid: model.config.grid,
            ..EvalConfig::default()
        }
    }
}

/// Metrics for one scene (or the average row).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub windows: usize,
    /// Min-over-modes ADE and FDE, m.
    pub ade: f64,
    pub fde: f64,
    /// Predictive NLL per window, nats.
    pub nll: f64,
    /// Mean pairwise mode W₂, m.
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// The `AVG` row (window-weighted over scenes).
    pub fn average(&self) -> &EvalRow {
        self.rows.last().expect("report has an average row")
    }

    /// Aligned text table.
    pub fn format_table(&self) -> String {
        let mut s = format!("model {}\n", self.model);
        let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>10} {:>8}", "scene", "windows", "ADE", "FDE", "NLL", "W2");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8.3} {:>8.3} {:>10.3} {:>8.3}",
                r.scene, r.windows, r.ade, r.fde, r.nll, r.w2
            );
        }
        s
    }

    /// Tab-separated `scene windows ADE FDE NLL W2 model`.
    pub fn format_tsv(&self) -> String {
        let mut s = String::from("scene\twindows\tADE\tFDE\tNLL\tW2\tmodel\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.scene, r.windows, r.ade, r.fde, r.nll, r.w2, self.model);
        }
        s
    }
}

/// Per-window metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetrics {
    pub ade: f64,
    pub fde: f64,
    pub nll: f64,
    pub w2: f64,
}

/// Metrics for every evaluation window of `split` in `ds` (recorded
/// tracks only), in track then time order.
pub fn evaluate_windows(predictor: &dyn Predictor, ds: &Dataset, cfg: &EvalConfig) -> Result<Vec<WindowMetrics>> {
    let builder = ContextBuilder::new(ds, cfg.t_obs, cfg.grid);
    let mut jobs = Vec::new();
    for tr in ds.split(cfg.split).filter(|t| !t.provenance.is_synthetic()) {
        let mut t = tr.start_step() + cfg.t_obs as i64;
        while t + cfg.t_pred as i64 <= tr.end_step() {
            jobs.push((tr, t));
            t += cfg.stride.max(1) as i64;
        }
    }
    if jobs.is_empty() {
        return Err(Error::Config(format!(
            "split {} has no window of {} + {} steps",
            cfg.split.name(),
            cfg.t_obs,
            cfg.t_pred
        )));
    }
    let chunks: Vec<Result<Vec<WindowMetrics>>> = jobs
        .par_chunks(32)
        .map(|chunk| {
            let ctxs = chunk
                .iter()
                .map(|(tr, t)| builder.build(tr.agent_id, *t))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&QueryContext> = ctxs.iter().collect();
            let preds = predictor.predict(&refs)?;
            if preds.len() != chunk.len() {
                return Err(Error::Input("predictor returned the wrong number of predictions".into()));
            }
            chunk
                .iter()
                .zip(&ctxs)
                .zip(&preds)
                .map(|(((tr, t), ctx), pred)| {
                    let steps = (t + 1..=t + cfg.t_pred as i64).map(|k| *tr.at_step(k).expect("inside track"));
                    let (pos, vel): (Vec<Vec2>, Vec<Vec2>) = steps.map(|s| (s.position, s.velocity)).unzip();
                    let pp = propagate_uncertainty(pred, ctx.position, Vec2::ZERO, ds.dt)?;
                    Ok(WindowMetrics {
                        ade: min_over_modes(ade, &pp, &pos)?.0,
                        fde: min_over_modes(fde, &pp, &pos)?.0,
                        nll: predictive_nll(pred, &vel)?,
                        w2: mean_pairwise_w2(&pp),
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(jobs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Per-scene and window-weighted average metrics.
pub fn evaluate(predictor: &dyn Predictor, scenes: &[(&str, &Dataset)], cfg: &EvalConfig) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Config("no scenes to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(scenes.len() + 1);
    let mut all = Vec::new();
    for (name, ds) in scenes {
        let w = evaluate_windows(predictor, ds, cfg)?;
        rows.push(summarize(name, &w));
        all.extend(w);
    }
    rows.push(summarize("AVG", &all));
    Ok(EvalReport {
        model: predictor.name(),
        rows,
    })
}

fn summarize(scene: &str, w: &[WindowMetrics]) -> EvalRow {
    let n = w.len().max(1) as f64;
    EvalRow {
        scene: scene.to_string(),
        windows: w.len(),
        ade: w.iter().map(|m| m.ade).sum::<f64>() / n,
        fde: w.iter().map(|m| m.fde).sum::<f64>() / n,
        nll: w.iter().map(|m| m.nll).sum::<f64>() / n,
        w2: w.iter().map(|m| m.w2).sum::<f64>() / n,
    }
}
