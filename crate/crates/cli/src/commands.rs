use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crowdcast::config::KvConfig;
use crowdcast::data::{load_dataset, save_dataset, ContextBuilder, GridConfig, OccupancyGrid};
use crowdcast::eval::{evaluate, EvalConfig};
use crowdcast::model::{full_loss_gradcheck, format_trace, train, LossMode};
use crowdcast::nn::{load_checkpoint, pretrain_encoder, save_checkpoint, GridAutoencoder, ParamStore, PretrainConfig};
use crowdcast::predict::{format_prediction, gnuplot_dump, predict_one_shot, propagate_uncertainty, SampleMode};
use crowdcast::sim::{generate_scenario_dataset, ScenarioConfig};
use crowdcast::topo::{augment_dataset, AugmentConfig};
use crowdcast::{Dataset, Error, ModelConfig, SocialVrnn, Split, TrainConfig, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{usage, write_out, CliError, CliResult, Command, DataArgs};

const GRAD_TOL: f64 = 1e-4;

pub fn execute(cmd: &Command, kv: &KvConfig) -> CliResult<()> {
    let out = cmd_out(cmd);
    match cmd {
        Command::Simulate { preset, .. } => simulate(kv, preset.as_deref(), out),
        Command::Augment { data, .. } => augment(kv, data, out),
        Command::PretrainEncoder { data, trace, .. } => pretrain(kv, data, trace.as_deref(), out),
        Command::Train { data, encoder, trace, .. } => train_cmd(kv, data, encoder.as_deref(), trace.as_deref(), out),
        Command::Predict { data, model, agent, step, sample, gnuplot, .. } => {
            predict(kv, data, model, *agent, *step, *sample, gnuplot.as_deref(), out)
        }
        Command::Evaluate { model, data, split, .. } => evaluate_cmd(kv, model, data, (*split).into(), out),
        Command::Gradcheck { eps, .. } => gradcheck(kv, *eps, out),
    }
}

fn cmd_out(cmd: &Command) -> Option<&Path> {
    cmd.common().out.as_deref()
}

fn seed(kv: &KvConfig) -> CliResult<u64> {
    usage(kv.get_or("seed", 0u64))
}

fn require_out<'a>(out: Option<&'a Path>, what: &str) -> CliResult<&'a Path> {
    out.ok_or_else(|| CliError::Usage(format!("{what} needs --out")))
}

/// Reads a dataset on the model time step; `map` replaces the sidecar map.
fn load_scene(path: &Path, map: Option<&Path>, dt: f64) -> CliResult<Dataset> {
    let mut ds = load_dataset(path, dt)?;
    if let Some(m) = map {
        ds.scene = OccupancyGrid::load_pgm(m)?;
    }
    log::info!("{}: {} trajectories", path.display(), ds.trajectories.len());
    Ok(ds)
}

fn save_scene(ds: &Dataset, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => Ok(save_dataset(ds, p)?),
        None => write_out(None, &crowdcast::data::format_dataset(ds)),
    }
}

fn simulate(kv: &KvConfig, preset: Option<&str>, out: Option<&Path>) -> CliResult<()> {
    let mut kv = kv.clone();
    if let Some(p) = preset {
        kv.set("preset", p);
    }
    let cfg = usage(ScenarioConfig::from_kv(&kv))?;
    let ds = generate_scenario_dataset(&cfg, seed(&kv)?)?;
    log::info!("simulated {} trajectories", ds.trajectories.len());
    save_scene(&ds, out)
}

fn augment(kv: &KvConfig, data: &DataArgs, out: Option<&Path>) -> CliResult<()> {
    let mc = usage(ModelConfig::from_kv(kv))?;
    let tc = usage(TrainConfig::from_kv(kv))?;
    let d = AugmentConfig::default();
    let cfg = AugmentConfig {
        m: mc.modes,
        horizon: mc.t_pred,
        t_obs: mc.t_obs,
        t_trunc: tc.t_trunc,
        stride: usage(kv.get_or("aug_stride", d.stride))?,
        l_max: usage(kv.get_or("aug_l_max", d.l_max))?,
        detour_cap: usage(kv.get_or("detour_cap", d.detour_cap))?,
        crop_margin: usage(kv.get_or("crop_margin", d.crop_margin))?,
        clearance: usage(kv.get_or("clearance", d.clearance))?,
        ..d
    };
    let ds = load_scene(&data.data, data.map.as_deref(), mc.dt)?;
    let (aug, stats) = augment_dataset(&ds, &cfg)?;
    eprintln!(
        "augment: {} windows, {} synthetic trajectories added, {} rejected, {} planner failures",
        stats.windows, stats.added, stats.rejected, stats.planner_failures
    );
    save_scene(&aug, out)
}

fn grid_config_pairs(grid: GridConfig, enc_feat: usize) -> Vec<(String, String)> {
    [
        ("grid_rows", grid.rows.to_string()),
        ("grid_cols", grid.cols.to_string()),
        ("grid_res", grid.resolution.to_string()),
        ("enc_feat", enc_feat.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn pretrain(kv: &KvConfig, data: &DataArgs, trace: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out, "pretrain-encoder")?;
    let mc = usage(ModelConfig::from_kv(kv))?;
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        steps: usage(kv.get_or("pretrain_steps", d.steps))?,
        batch: usage(kv.get_or("pretrain_batch", d.batch))?,
        lr: usage(kv.get_or("pretrain_lr", d.lr))?,
        ..d
    };
    let stride: i64 = usage(kv.get_or("pretrain_stride", 4i64))?;
    if stride < 1 {
        return Err(CliError::Usage("pretrain_stride must be >= 1".into()));
    }
    let seed = seed(kv)?;
    let ds = load_scene(&data.data, data.map.as_deref(), mc.dt)?;
    let b = ContextBuilder::new(&ds, mc.t_obs, mc.grid);
    let mut grids = Vec::new();
    for tr in ds.split(Split::Train) {
        let mut s = tr.start_step() + mc.t_obs as i64;
        while s <= tr.end_step() {
            grids.push(b.build(tr.agent_id, s)?.grid);
            s += stride;
        }
    }
    log::info!("pretraining on {} grid crops", grids.len());
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ae = GridAutoencoder::new(&mut store, "", mc.grid.rows, mc.grid.cols, mc.enc_feat, &mut rng);
    let losses = pretrain_encoder(&ae, &mut store, &grids, &cfg, seed)?;
    if let Some(t) = trace {
        let mut s = String::from("step\tL_env\n");
        for (i, l) in losses.iter().enumerate() {
            s.push_str(&format!("{i}\t{l}\n"));
        }
        write_out(Some(t), &s)?;
    }
    if let Some(l) = losses.last() {
        eprintln!("pretrain-encoder: final reconstruction loss {l:.4}");
    }
    save_checkpoint(out, &grid_config_pairs(mc.grid, mc.enc_feat), &store)?;
    Ok(())
}

fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.tsv");
    PathBuf::from(s)
}

fn train_cmd(
    kv: &KvConfig,
    data: &DataArgs,
    encoder: Option<&Path>,
    trace: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let out = require_out(out, "train")?;
    let mc = usage(ModelConfig::from_kv(kv))?;
    let tc = usage(TrainConfig::from_kv(kv))?;
    let ds = load_scene(&data.data, data.map.as_deref(), mc.dt)?;
    let mut model = SocialVrnn::new(mc.clone(), tc.seed)?;
    if let Some(path) = encoder {
        let ck = load_checkpoint(path)?;
        let want = grid_config_pairs(mc.grid, mc.enc_feat);
        for (k, v) in &want {
            if ck.config_value(k) != Some(v.as_str()) {
                return Err(CliError::Usage(format!(
                    "encoder {} has {k} = {}, model config has {v}",
                    path.display(),
                    ck.config_value(k).unwrap_or("?")
                )));
            }
        }
        let n = model.load_encoder(&ck.params, "")?;
        log::info!("loaded {n} encoder tensors from {}", path.display());
    } else {
        log::warn!("training without a pretrained encoder");
    }
    let report = train(&mut model, &ds, &tc, |step, m| {
        log::info!("checkpoint at step {step}");
        m.save(out)
    })?;
    write_out(Some(&trace.map(Path::to_path_buf).unwrap_or_else(|| trace_path(out))), &format_trace(mc.kind, &report.trace))?;
    if let Some(last) = report.trace.last() {
        eprintln!(
            "train: {} steps on {} windows, final loss {:.4}, {} floored log-densities",
            report.trace.len(),
            report.windows,
            last.loss,
            report.clamp_incidents
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict(
    kv: &KvConfig,
    data: &DataArgs,
    model: &Path,
    agent: u32,
    step: Option<i64>,
    sample: Option<u64>,
    gnuplot: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let m = SocialVrnn::load(model)?;
    let c = &m.config;
    let dt: f64 = usage(kv.get_or("dt", c.dt))?;
    let ds = load_scene(&data.data, data.map.as_deref(), dt)?;
    let tr = ds
        .trajectory(agent)
        .ok_or_else(|| Error::Lookup(format!("agent {agent} not in {}", data.data.display())))?;
    let step = step.unwrap_or(tr.start_step() + c.t_obs as i64);
    let ctx = ContextBuilder::new(&ds, c.t_obs, c.grid).build(agent, step)?;
    let mode = match sample {
        Some(s) => SampleMode::PriorSample(s),
        None => SampleMode::PriorMean,
    };
    let pred = predict_one_shot(&m, &ctx, mode)?;
    let pos = propagate_uncertainty(&pred, ctx.position, Vec2::ZERO, ds.dt)?;
    if let Some(g) = gnuplot {
        write_out(Some(g), &gnuplot_dump(&pos, ctx.position))?;
    }
    write_out(out, &format_prediction(&pred, &pos))
}

fn evaluate_cmd(kv: &KvConfig, models: &[PathBuf], data: &[String], split: Split, out: Option<&Path>) -> CliResult<()> {
    let mut named = Vec::new();
    for spec in data {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let n = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (n, p)
            }
        };
        named.push((name, path));
    }
    let stride: usize = usage(kv.get_or("eval_stride", 8usize))?;
    let mut cache: BTreeMap<u64, Vec<(String, Dataset)>> = BTreeMap::new();
    let (mut table, mut tsv) = (String::new(), String::new());
    for path in models {
        let m = SocialVrnn::load(path)?;
        let key = m.config.dt.to_bits();
        if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(key) {
            let mut v = Vec::new();
            for (n, p) in &named {
                v.push((n.clone(), load_scene(p, None, m.config.dt)?));
            }
            e.insert(v);
        }
        let scenes: Vec<(&str, &Dataset)> = cache[&key].iter().map(|(n, d)| (n.as_str(), d)).collect();
        let cfg = EvalConfig { stride, split, ..EvalConfig::for_model(&m) };
        let report = evaluate(&m, &scenes, &cfg)?;
        table.push_str(&report.format_table());
        table.push('\n');
        let t = report.format_tsv();
        if tsv.is_empty() {
            tsv.push_str(&t);
        } else {
            tsv.push_str(t.split_once('\n').map_or("", |x| x.1));
        }
    }
    match out {
        Some(p) => {
            write_out(Some(p), &tsv)?;
            eprint!("{table}");
            Ok(())
        }
        None => write_out(None, &table),
    }
}

/// Small model whose full-loss gradient can be checked in seconds.
fn toy_model_config(kv: &KvConfig) -> CliResult<ModelConfig> {
    let mut toy = KvConfig::default();
    for (k, v) in [
        ("M", "2"),
        ("T_O", "2"),
        ("T_H", "3"),
        ("feat_v", "3"),
        ("feat_env", "3"),
        ("feat_nb", "2"),
        ("enc_feat", "4"),
        ("grid_rows", "8"),
        ("grid_cols", "8"),
        ("grid_res", "0.5"),
        ("hidden", "8"),
        ("latent", "8"),
        ("prior", "8"),
    ] {
        toy.set(k, v);
    }
    for k in ["model", "storn", "deterministic"] {
        if let Some(v) = kv.raw(k) {
            toy.set(k, v);
        }
    }
    usage(ModelConfig::from_kv(&toy))
}

fn gradcheck(kv: &KvConfig, eps: f64, out: Option<&Path>) -> CliResult<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(format!("--eps must be > 0, got {eps}")));
    }
    let seed = seed(kv)?;
    let mc = toy_model_config(kv)?;
    let loss = if usage(kv.get_bool_or("mdn_loss", false))? { LossMode::Mdn } else { LossMode::PerMode };
    let mut sc = ScenarioConfig::plaza15();
    sc.episodes = 1;
    let ds = generate_scenario_dataset(&sc, seed)?;
    let mut model = SocialVrnn::new(mc.clone(), seed)?;
    model.perturb_params(0.1, seed);
    let tc = TrainConfig { batch: 2, t_trunc: 2, loss, sigma_nb: 0.1, seed, ..TrainConfig::default() };
    let (rep, names) = full_loss_gradcheck(&model, &ds, &tc, 0.7, eps)?;
    let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, e) in names.iter().zip(&rep.per_param) {
        let g = name.split('.').next().unwrap_or(name);
        let v = groups.entry(g).or_insert(0.0);
        *v = v.max(*e);
    }
    let mut s = format!("# model {} loss {:?} eps {eps:e}\ngroup\tmax_rel_err\n", mc.kind.name(), loss);
    for (g, e) in &groups {
        s.push_str(&format!("{g}\t{e:.3e}\n"));
    }
    write_out(out, &s)?;
    let worst = rep.max_rel_error();
    if worst >= GRAD_TOL {
        let (pi, k) = rep.worst;
        return Err(Error::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRAD_TOL:e} (worst entry {}[{k}])",
            names[pi]
        ))
        .into());
    }
    Ok(())
}
