#![allow(dead_code)]

use crowdcast::data::{AgentState, ContextBuilder, Dataset, GridConfig, OccupancyGrid, Split, Trajectory};
use crowdcast::model::{LossMode, ModelConfig, ModelKind, SocialVrnn, TrainConfig};
use crowdcast::nn::{pretrain_encoder, GridAutoencoder, LrSchedule, ParamStore, PretrainConfig};
use crowdcast::sim::{generate_scenario_dataset, ScenarioConfig};
use crowdcast::topo::{augment_dataset, AugmentConfig};
use crowdcast::Vec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOY_T_TRUNC: usize = 2;

pub fn toy_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        feat_v: 16,
        feat_env: 16,
        feat_nb: 16,
        enc_feat: 16,
        grid: GridConfig { rows: 16, cols: 16, resolution: 0.4 },
        hidden: 32,
        latent: 8,
        prior: 16,
        ..ModelConfig::default()
    }
}

pub fn toy_train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 16,
        lr: LrSchedule { base: 3e-3, rate: 0.9, interval: 2000 },
        t_trunc: TOY_T_TRUNC,
        loss: LossMode::Mdn,
        anneal_start: 500.0,
        anneal_width: 500.0,
        checkpoint_every: 0,
        seed,
        ..TrainConfig::default()
    }
}

/// Corridor scenario augmented with opposite-class trajectories.
/// One plaza episode: 15 agents, so the social channel sees neighbours.
pub fn plaza_episode() -> Dataset {
    let mut sc = ScenarioConfig::plaza15();
    sc.episodes = 1;
    generate_scenario_dataset(&sc, 0).unwrap()
}

pub fn corridor_toy() -> Dataset {
    let ds = generate_scenario_dataset(&ScenarioConfig::corridor(), 1).unwrap();
    let aug = AugmentConfig { t_trunc: TOY_T_TRUNC, ..AugmentConfig::default() };
    augment_dataset(&ds, &aug).unwrap().0
}

/// Straight tracks at one constant velocity, disjoint in time so no
/// agent sees another.
pub fn constant_velocity_dataset(v: Vec2, agents: u32, len: usize, dt: f64) -> Dataset {
    let trajs: Vec<Trajectory> = (0..agents)
        .map(|i| {
            let p0 = Vec2::new(0.0, 2.0 * i as f64);
            let states = (0..len).map(|k| AgentState::new(p0 + v * (k as f64 * dt), v)).collect();
            Trajectory::new(i, (i as usize * (len + 1)) as i64, dt, states)
        })
        .collect();
    let scene = OccupancyGrid::new(Vec2::new(-20.0, -20.0), 0.5, 160, 4 * agents as usize + 80).unwrap();
    Dataset::new(trajs, scene, dt)
}

/// Grid autoencoder pretrained on training-split crops of `ds`.
pub fn pretrained_encoder(ds: &Dataset, cfg: &ModelConfig, steps: usize) -> ParamStore<f32> {
    let b = ContextBuilder::new(ds, cfg.t_obs, cfg.grid);
    let mut grids = Vec::new();
    for tr in ds.split(Split::Train) {
        let mut s = tr.start_step() + cfg.t_obs as i64;
        while s <= tr.end_step() {
            grids.push(b.build(tr.agent_id, s).unwrap().grid);
            s += 4;
        }
    }
    let mut st = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ae = GridAutoencoder::new(&mut st, "", cfg.grid.rows, cfg.grid.cols, cfg.enc_feat, &mut rng);
    pretrain_encoder(&ae, &mut st, &grids, &PretrainConfig { steps, ..Default::default() }, 0).unwrap();
    st
}

pub fn model_with_encoder(cfg: ModelConfig, encoder: &ParamStore<f32>, seed: u64) -> SocialVrnn {
    let mut m = SocialVrnn::new(cfg, seed).unwrap();
    m.load_encoder(encoder, "").unwrap();
    m
}
