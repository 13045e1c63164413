use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelKind, TrainConfig};
use super::gmm::anneal_lambda_with;
use super::net::{training_windows, window_batch, window_samples, LossOptions, SocialVrnn};
use crate::autodiff::{gradcheck, Graph, GradcheckReport, Tensor};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{clip_gradients, load_checkpoint, save_checkpoint, Bound, Checkpoint, RmsProp};

/// One line of the loss trace; losses are averaged over the unrolled steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub l_m: f64,
    pub l_kl: f64,
    pub l_div: f64,
    pub lambda: f64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Training windows available.
    pub windows: usize,
    /// Log-density terms that hit the floor.
    pub clamp_incidents: usize,
}

/// Tab-separated trace with a header line.
pub fn format_trace(kind: ModelKind, rows: &[TraceRow]) -> String {
    let mut s = String::from("step\tL_m\tL_KL\tL_div\tlambda\tlr\tloss\tmode\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step,
            r.l_m,
            r.l_kl,
            r.l_div,
            r.lambda,
            r.lr,
            r.loss,
            kind.name()
        );
    }
    s
}

/// Trains `model` on the training split of `ds`. `checkpoint` is called
/// every `cfg.checkpoint_every` steps and after the last one.
pub fn train(
    model: &mut SocialVrnn,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &SocialVrnn) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let c = model.config.clone();
    if (ds.dt - c.dt).abs() > 1e-9 {
        return Err(Error::Config(format!("dataset dt {} differs from model dt {}", ds.dt, c.dt)));
    }
    let windows = training_windows(ds, c.t_obs, c.t_pred, cfg.t_trunc, Some(Split::Train));
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no training window long enough for T_O={} + t_trunc={} + T_H={} steps",
            c.t_obs, cfg.t_trunc, c.t_pred
        )));
    }
    let samples = window_samples(model, ds, &windows, cfg.t_trunc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = RmsProp::new(&model.params);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch.min(windows.len());
    let sigmas = [cfg.sigma_v, cfg.sigma_env, cfg.sigma_nb];
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut incidents = 0;
    for step in 0..cfg.steps {
        let mut pick = Vec::with_capacity(batch);
        while pick.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            pick.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let wb = window_batch::<f32>(model, &pick, sigmas, &mut rng)?;
        let lambda = anneal_lambda_with(step as u64, cfg.anneal_start, cfg.anneal_width);
        let opts = LossOptions {
            mode: cfg.loss,
            lambda,
            beta: cfg.beta,
            lambda_reg: cfg.lambda_reg,
        };
        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let out = model.window_loss(&mut g, &p, &wb, &opts, None)?;
        let loss = g.value(out.total).item() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss is {loss} at step {step}")));
        }
        incidents += out.incidents;
        let lr = cfg.lr.at(step as u64);
        trace.push(TraceRow {
            step,
            l_m: out.l_m,
            l_kl: out.l_kl,
            l_div: out.l_div,
            lambda,
            lr,
            loss,
        });
        let grads = g.backward(out.total)?;
        let mut gs = model.params.collect_grads(&p, &grads);
        clip_gradients(&mut gs, cfg.clip);
        opt.step(&mut model.params, &gs, lr);
        let done = step + 1;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.steps {
            checkpoint(done, model)?;
        }
    }
    Ok(TrainReport {
        trace,
        windows: windows.len(),
        clamp_incidents: incidents,
    })
}

impl SocialVrnn {
    /// Adds `U(−scale, scale)` noise to every trainable entry. Freshly
    /// initialised biases are zero, which puts ReLU units exactly on their
    /// kink; gradient checks are run from a perturbed point instead.
    pub fn perturb_params(&mut self, scale: f32, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = self.params.ids().filter(|&id| self.params.is_trainable(id)).collect();
        for id in ids {
            for v in self.params.get_mut(id).data_mut() {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        crate::nn::encode_checkpoint(&self.config.to_pairs(), &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config.to_pairs(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    /// Rebuilds a model from a checkpoint; every tensor must match the
    /// architecture named in its config.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_pairs(&ck.config)?;
        let mut m = SocialVrnn::new(config, 0)?;
        if ck.params.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                ck.params.len(),
                m.params.len()
            )));
        }
        for id in ck.params.ids() {
            let name = ck.params.name(id).to_string();
            m.params
                .assign(&name, ck.params.get(id).clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        Ok(m)
    }
}

/// Central-difference check of the full training loss in `f64` over the
/// trainable parameters. Uses the first `cfg.batch` windows of `ds` (any
/// split) with `λ` fixed to `lambda`; diversity targets are generated once
/// and then held fixed, matching their detached role in training.
/// Returns the report and the parameter names in report order.
pub fn full_loss_gradcheck(
    model: &SocialVrnn,
    ds: &Dataset,
    cfg: &TrainConfig,
    lambda: f64,
    eps: f64,
) -> Result<(GradcheckReport, Vec<String>)> {
    let c = &model.config;
    let mut windows = training_windows(ds, c.t_obs, c.t_pred, cfg.t_trunc, None);
    windows.truncate(cfg.batch);
    if windows.is_empty() {
        return Err(Error::Config("no window long enough for the gradient check".into()));
    }
    let samples = window_samples(model, ds, &windows, cfg.t_trunc)?;
    let refs: Vec<_> = samples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wb = window_batch::<f64>(model, &refs, [cfg.sigma_v, cfg.sigma_env, cfg.sigma_nb], &mut rng)?;
    let opts = LossOptions {
        mode: cfg.loss,
        lambda,
        beta: cfg.beta,
        lambda_reg: cfg.lambda_reg,
    };
    let store = model.params.cast::<f64>();
    let targets = {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        model.window_loss(&mut g, &p, &wb, &opts, None)?.targets
    };
    let trainable: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let params: Vec<Tensor<f64>> = trainable.iter().map(|&id| store.get(id).clone()).collect();
    let names = trainable.iter().map(|&id| store.name(id).to_string()).collect();
    let report = gradcheck(
        |g, vars| {
            let mut k = 0;
            let all = store
                .ids()
                .map(|id| {
                    if store.is_trainable(id) {
                        k += 1;
                        vars[k - 1]
                    } else {
                        g.constant(store.get(id).clone())
                    }
                })
                .collect();
            let p = Bound::from_vars(all);
            Ok(model.window_loss(g, &p, &wb, &opts, Some(&targets))?.total)
        },
        &params,
        eps,
    )?;
    Ok((report, names))
}
