use crate::config::KvConfig;
use crate::data::GridConfig;
use crate::error::{Error, Result};
use crate::nn::LrSchedule;

/// Which network is built and trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Time-dependent prior from the decoder state.
    #[default]
    SocialVrnn,
    /// Constant standard-normal prior.
    Storn,
    /// No latent, no mixture: a single velocity sequence.
    Deterministic,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SocialVrnn => "svrnn",
            ModelKind::Storn => "storn",
            ModelKind::Deterministic => "deterministic",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "svrnn" => Some(ModelKind::SocialVrnn),
            "storn" => Some(ModelKind::Storn),
            "deterministic" => Some(ModelKind::Deterministic),
            _ => None,
        }
    }
}

/// Reconstruction loss form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// `Σ_m Σ_k −log(π_m N(v_k; μ_mk, σ_mk))`.
    #[default]
    PerMode,
    /// `Σ_k −log Σ_m π_m N(v_k; μ_mk, σ_mk)`.
    Mdn,
}

/// Network sizes and output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Mixture components M.
    pub modes: usize,
    /// Observed history T_O, steps.
    pub t_obs: usize,
    /// Prediction horizon T_H, steps.
    pub t_pred: usize,
    pub dt: f64,
    /// Velocity, grid and neighbor channel widths; they sum to the feature size.
    pub feat_v: usize,
    pub feat_env: usize,
    pub feat_nb: usize,
    /// Grid autoencoder code size.
    pub enc_feat: usize,
    pub grid: GridConfig,
    /// Decoder LSTM hidden size H.
    pub hidden: usize,
    /// Latent width w_z.
    pub latent: usize,
    /// Hidden width of the prior and posterior nets.
    pub prior: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::SocialVrnn,
            modes: 3,
            t_obs: 8,
            t_pred: 12,
            dt: crate::DEFAULT_DT,
            feat_v: 128,
            feat_env: 256,
            feat_nb: 128,
            enc_feat: 64,
            grid: GridConfig::default(),
            hidden: 128,
            latent: 128,
            prior: 128,
        }
    }
}

impl ModelConfig {
    pub fn feature_size(&self) -> usize {
        self.feat_v + self.feat_env + self.feat_nb
    }

    /// Raw head outputs: `4·M·T_H + M` for the mixture models, `2·T_H`
    /// for the deterministic baseline.
    pub fn head_size(&self) -> usize {
        match self.kind {
            ModelKind::Deterministic => 2 * self.t_pred,
            _ => 4 * self.modes * self.t_pred + self.modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("M", self.modes),
            ("T_O", self.t_obs),
            ("T_H", self.t_pred),
            ("feat_v", self.feat_v),
            ("feat_env", self.feat_env),
            ("feat_nb", self.feat_nb),
            ("enc_feat", self.enc_feat),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("prior", self.prior),
            ("grid_rows", self.grid.rows),
            ("grid_cols", self.grid.cols),
        ];
        for (k, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if self.grid.rows < 3 || self.grid.cols < 3 || self.grid.rows % 4 != self.grid.cols % 4 {
            return Err(Error::Config(format!(
                "grid {}x{} must be at least 3x3 with matching row/column parity",
                self.grid.rows, self.grid.cols
            )));
        }
        if !(self.dt > 0.0) || !(self.grid.resolution > 0.0) {
            return Err(Error::Config("dt and grid_res must be > 0".into()));
        }
        Ok(())
    }

    /// `(key, value)` pairs stored in checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = self;
        [
            ("model", c.kind.name().to_string()),
            ("M", c.modes.to_string()),
            ("T_O", c.t_obs.to_string()),
            ("T_H", c.t_pred.to_string()),
            ("dt", c.dt.to_string()),
            ("feat_v", c.feat_v.to_string()),
            ("feat_env", c.feat_env.to_string()),
            ("feat_nb", c.feat_nb.to_string()),
            ("enc_feat", c.enc_feat.to_string()),
            ("grid_rows", c.grid.rows.to_string()),
            ("grid_cols", c.grid.cols.to_string()),
            ("grid_res", c.grid.resolution.to_string()),
            ("hidden", c.hidden.to_string()),
            ("latent", c.latent.to_string()),
            ("prior", c.prior.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Reads model keys from `kv`, defaulting the rest.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = ModelConfig::default();
        let kind = match kv.raw("model") {
            None => {
                if kv.get_bool_or("deterministic", false)? {
                    ModelKind::Deterministic
                } else if kv.get_bool_or("storn", false)? {
                    ModelKind::Storn
                } else {
                    ModelKind::SocialVrnn
                }
            }
            Some(s) => ModelKind::parse(s).ok_or_else(|| {
                Error::Config(format!("model must be svrnn, storn or deterministic, got `{s}`"))
            })?,
        };
        let c = ModelConfig {
            kind,
            modes: kv.get_or("M", d.modes)?,
            t_obs: kv.get_or("T_O", d.t_obs)?,
            t_pred: kv.get_or("T_H", d.t_pred)?,
            dt: kv.get_or("dt", d.dt)?,
            feat_v: kv.get_or("feat_v", d.feat_v)?,
            feat_env: kv.get_or("feat_env", d.feat_env)?,
            feat_nb: kv.get_or("feat_nb", d.feat_nb)?,
            enc_feat: kv.get_or("enc_feat", d.enc_feat)?,
            grid: GridConfig {
                rows: kv.get_or("grid_rows", d.grid.rows)?,
                cols: kv.get_or("grid_cols", d.grid.cols)?,
                resolution: kv.get_or("grid_res", d.grid.resolution)?,
            },
            hidden: kv.get_or("hidden", d.hidden)?,
            latent: kv.get_or("latent", d.latent)?,
            prior: kv.get_or("prior", d.prior)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut kv = KvConfig::default();
        for (k, v) in pairs {
            kv.set(k, v);
        }
        Self::from_kv(&kv)
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: LrSchedule,
    /// Global gradient-norm cap.
    pub clip: f64,
    /// Unrolled context steps per window.
    pub t_trunc: usize,
    pub loss: LossMode,
    /// Diversity weight β.
    pub beta: f64,
    /// Feature perturbation std for the velocity, grid and neighbor channels.
    pub sigma_v: f64,
    pub sigma_env: f64,
    pub sigma_nb: f64,
    /// KL annealing: `λ = max(0, tanh((step − start) / width))`.
    pub anneal_start: f64,
    pub anneal_width: f64,
    /// L2 weight for the deterministic baseline.
    pub lambda_reg: f64,
    /// Checkpoint interval in steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch: 16,
            lr: LrSchedule::default(),
            clip: 1.0,
            t_trunc: 4,
            loss: LossMode::PerMode,
            beta: 0.2,
            sigma_v: 0.2,
            sigma_env: 0.2,
            sigma_nb: 0.0,
            anneal_start: 1e4,
            anneal_width: 1e3,
            lambda_reg: 1e-4,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.t_trunc == 0 {
            return Err(Error::Config("batch and t_trunc must be >= 1".into()));
        }
        let nonneg = [
            ("beta", self.beta),
            ("sigma_v", self.sigma_v),
            ("sigma_env", self.sigma_env),
            ("sigma_nb", self.sigma_nb),
            ("lambda_reg", self.lambda_reg),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.clip > 0.0 && self.anneal_width > 0.0 && self.lr.base > 0.0) {
            return Err(Error::Config("clip, anneal_width and lr must be > 0".into()));
        }
        if !(self.lr.rate > 0.0 && self.lr.rate <= 1.0) || self.lr.interval == 0 {
            return Err(Error::Config("lr_decay must be in (0, 1] and lr_interval >= 1".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            steps: kv.get_or("steps", d.steps)?,
            batch: kv.get_or("batch", d.batch)?,
            lr: LrSchedule {
                base: kv.get_or("lr", d.lr.base)?,
                rate: kv.get_or("lr_decay", d.lr.rate)?,
                interval: kv.get_or("lr_interval", d.lr.interval)?,
            },
            clip: kv.get_or("clip", d.clip)?,
            t_trunc: kv.get_or("t_trunc", d.t_trunc)?,
            loss: if kv.get_bool_or("mdn_loss", false)? {
                LossMode::Mdn
            } else {
                LossMode::PerMode
            },
            beta: kv.get_or("beta", d.beta)?,
            sigma_v: kv.get_or("sigma_v", d.sigma_v)?,
            sigma_env: kv.get_or("sigma_env", d.sigma_env)?,
            sigma_nb: kv.get_or("sigma_nb", d.sigma_nb)?,
            anneal_start: kv.get_or("anneal_start", d.anneal_start)?,
            anneal_width: kv.get_or("anneal_width", d.anneal_width)?,
            lambda_reg: kv.get_or("lambda_reg", d.lambda_reg)?,
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Every model and training key: (key, default, unit or meaning).
pub const TRAIN_KEYS: &[(&str, &str, &str)] = &[
    ("model", "svrnn", "svrnn | storn | deterministic"),
    ("storn", "false", "bool, same as model = storn"),
    ("deterministic", "false", "bool, same as model = deterministic"),
    ("mdn_loss", "false", "bool, mixture log-sum-exp reconstruction loss"),
    ("M", "3", "mixture components"),
    ("T_O", "8", "observed steps"),
    ("T_H", "12", "predicted steps"),
    ("dt", "0.4", "s"),
    ("feat_v", "128", "velocity channel width"),
    ("feat_env", "256", "grid channel width"),
    ("feat_nb", "128", "neighbor channel width"),
    ("enc_feat", "64", "grid autoencoder code size"),
    ("grid_rows", "32", "cells"),
    ("grid_cols", "32", "cells"),
    ("grid_res", "0.2", "m per cell"),
    ("hidden", "128", "decoder LSTM size"),
    ("latent", "128", "latent width"),
    ("prior", "128", "prior/posterior hidden width"),
    ("steps", "20000", "optimizer steps"),
    ("batch", "16", "windows per step"),
    ("lr", "1e-4", "base learning rate"),
    ("lr_decay", "0.9", "factor per lr_interval"),
    ("lr_interval", "2000", "steps"),
    ("clip", "1.0", "global gradient norm"),
    ("t_trunc", "4", "unrolled context steps"),
    ("beta", "0.2", "diversity weight"),
    ("sigma_v", "0.2", "velocity-feature noise std"),
    ("sigma_env", "0.2", "grid-feature noise std"),
    ("sigma_nb", "0.0", "neighbor-feature noise std"),
    ("anneal_start", "10000", "steps"),
    ("anneal_width", "1000", "steps"),
    ("lambda_reg", "1e-4", "baseline L2 weight"),
    ("checkpoint_every", "1000", "steps, 0 = off"),
    ("seed", "0", "RNG seed"),
];
