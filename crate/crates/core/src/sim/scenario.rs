use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::field::ObstacleField;
use super::world::{splitmix, step_simulation, AgentStatus, SimAgent, SimWorld};
use super::SfParams;
use crate::config::KvConfig;
use crate::data::{AgentState, Dataset, OccupancyGrid, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{resample_polyline, Vec2};
use crate::topo::{ha_star, HaStarOptions};

/// Axis-aligned box `[min, max]`; degenerate boxes are lines or points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            min: Vec2::new(x0.min(x1), y0.min(y1)),
            max: Vec2::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec2 {
        let u = |a: f64, b: f64, rng: &mut dyn rand::RngCore| if b > a { rng.gen_range(a..=b) } else { a };
        Vec2::new(u(self.min.x, self.max.x, rng), u(self.min.y, self.max.y, rng))
    }

    /// Parses `x0 y0 x1 y1` boxes separated by `;`.
    pub fn parse_list(s: &str) -> Result<Vec<Rect>> {
        s.split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: Vec<f64> = t
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse::<f64>().map_err(|_| Error::Config(format!("bad number {x:?} in box {t:?}"))))
                    .collect::<Result<_>>()?;
                if v.len() != 4 {
                    return Err(Error::Config(format!("box {t:?} needs 4 numbers")));
                }
                Ok(Rect::new(v[0], v[1], v[2], v[3]))
            })
            .collect()
    }
}

/// Everything needed to generate a synthetic dataset.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub scene: OccupancyGrid,
    /// Spawn regions; agent spawning in `spawn[k]` heads for `goals[k]`.
    pub spawn: Vec<Rect>,
    pub goals: Vec<Rect>,
    pub agents: usize,
    pub episodes: usize,
    pub episode_s: f64,
    /// Recording interval, s.
    pub dt: f64,
    /// Integration steps per recording interval.
    pub substeps: usize,
    /// Homotopy classes offered to each agent's route choice.
    pub route_classes: usize,
    /// Extra clearance added to the body radius for planning, m.
    pub plan_clearance: f64,
    pub sf: SfParams,
}

/// Config keys accepted by [`ScenarioConfig::from_kv`], with default and unit.
pub const SCENARIO_KEYS: &[(&str, &str, &str)] = &[
    ("preset", "corridor", "corridor | plaza15"),
    ("agents", "preset", "agents per episode"),
    ("episodes", "preset", "count"),
    ("episode_s", "preset", "s"),
    ("spawn", "preset", "boxes `x0 y0 x1 y1; ...`, m"),
    ("goals", "preset", "boxes paired with spawn, m"),
    ("map", "preset", "PGM path with .meta sidecar"),
    ("obstacles", "none", "extra boxes stamped on the map, m"),
    ("route_classes", "preset", "homotopy classes per route choice"),
    ("seed", "0", "integer"),
    ("noise_std", "0.1", "m/s^2"),
    ("v_des", "1.34", "m/s"),
];

const SPAWN_TRIES: usize = 200;

impl ScenarioConfig {
    /// Corridor: 24 m × 8 m, walls top and bottom, a 2 m
    /// square obstacle in the middle. Agents walk left to right.
    pub fn corridor() -> Self {
        let mut scene = OccupancyGrid::new(Vec2::new(0.0, -4.0), 0.2, 120, 40).expect("static grid");
        scene.fill_rect(Vec2::new(0.0, -4.0), Vec2::new(24.0, -3.6), 1.0);
        scene.fill_rect(Vec2::new(0.0, 3.6), Vec2::new(24.0, 4.0), 1.0);
        scene.fill_rect(Vec2::new(11.0, -1.0), Vec2::new(13.0, 1.0), 1.0);
        ScenarioConfig {
            name: "corridor".into(),
            scene,
            spawn: vec![Rect::new(1.0, -1.0, 2.0, 1.0)],
            goals: vec![Rect::new(22.5, -1.0, 22.5, 1.0)],
            agents: 1,
            episodes: 40,
            episode_s: 24.0,
            dt: crate::DEFAULT_DT,
            substeps: 4,
            route_classes: 2,
            plan_clearance: 0.2,
            sf: SfParams::default(),
        }
    }

    /// Plaza: 16 m × 16 m, five boxes, 15 agents crossing
    /// between opposite edges.
    pub fn plaza15() -> Self {
        let mut scene = OccupancyGrid::new(Vec2::ZERO, 0.2, 80, 80).expect("static grid");
        for (x0, y0, x1, y1) in [
            (0.0, 0.0, 16.0, 0.2),
            (0.0, 15.8, 16.0, 16.0),
            (0.0, 0.0, 0.2, 16.0),
            (15.8, 0.0, 16.0, 16.0),
            (4.0, 4.0, 5.6, 5.6),
            (10.4, 4.0, 12.0, 5.6),
            (4.0, 10.4, 5.6, 12.0),
            (10.4, 10.4, 12.0, 12.0),
            (7.4, 7.4, 8.6, 8.6),
        ] {
            scene.fill_rect(Vec2::new(x0, y0), Vec2::new(x1, y1), 1.0);
        }
        let left = Rect::new(1.0, 1.5, 2.0, 14.5);
        let right = Rect::new(14.0, 1.5, 15.0, 14.5);
        let bottom = Rect::new(1.5, 1.0, 14.5, 2.0);
        let top = Rect::new(1.5, 14.0, 14.5, 15.0);
        ScenarioConfig {
            name: "plaza15".into(),
            scene,
            spawn: vec![left, right, bottom, top],
            goals: vec![right, left, top, bottom],
            agents: 15,
            episodes: 4,
            episode_s: 30.0,
            dt: crate::DEFAULT_DT,
            substeps: 4,
            route_classes: 1,
            plan_clearance: 0.2,
            sf: SfParams::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "corridor" => Ok(Self::corridor()),
            "plaza15" => Ok(Self::plaza15()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected corridor or plaza15)"
            ))),
        }
    }

    /// Builds a scenario from a preset plus overrides in `kv`.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::preset(kv.raw("preset").unwrap_or("corridor"))?;
        if let Some(path) = kv.raw("map") {
            c.scene = OccupancyGrid::load_pgm(Path::new(path))?;
        }
        if let Some(s) = kv.raw("obstacles") {
            for r in Rect::parse_list(s)? {
                c.scene.fill_rect(r.min, r.max, 1.0);
            }
        }
        if let Some(s) = kv.raw("spawn") {
            c.spawn = Rect::parse_list(s)?;
        }
        if let Some(s) = kv.raw("goals") {
            c.goals = Rect::parse_list(s)?;
        }
        c.agents = kv.get_or("agents", c.agents)?;
        c.episodes = kv.get_or("episodes", c.episodes)?;
        c.episode_s = kv.get_or("episode_s", c.episode_s)?;
        c.route_classes = kv.get_or("route_classes", c.route_classes)?;
        c.sf.noise_std = kv.get_or("noise_std", c.sf.noise_std)?;
        c.sf.v_des = kv.get_or("v_des", c.sf.v_des)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.sf.validate()?;
        if self.spawn.is_empty() || self.spawn.len() != self.goals.len() {
            return Err(Error::Config(format!(
                "need matching spawn and goal boxes, got {} and {}",
                self.spawn.len(),
                self.goals.len()
            )));
        }
        if self.agents == 0 || self.episodes == 0 || self.substeps == 0 || self.route_classes == 0 {
            return Err(Error::Config("agents, episodes, substeps and route_classes must be >= 1".into()));
        }
        if !(self.episode_s > 0.0 && self.dt > 0.0) || self.dt / self.substeps as f64 > 0.5 {
            return Err(Error::Config("episode_s and dt must be > 0 with dt/substeps <= 0.5".into()));
        }
        Ok(())
    }

    fn episode_steps(&self) -> i64 {
        (self.episode_s / self.dt).round() as i64
    }
}

/// Plans a route for one agent; picks one of the returned homotopy
/// classes uniformly at random.
fn plan_route(
    plan_grid: &OccupancyGrid,
    from: Vec2,
    to: Vec2,
    classes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec2>> {
    let paths = ha_star(
        plan_grid,
        plan_grid.cell_of(from),
        plan_grid.cell_of(to),
        classes,
        &HaStarOptions::default(),
    )?;
    let chosen = paths
        .choose(rng)
        .ok_or_else(|| Error::Config(format!("goal {to:?} is unreachable from {from:?}")))?;
    let mut pts = chosen.points.clone();
    pts[0] = from;
    *pts.last_mut().unwrap() = to;
    let mut wps = resample_polyline(&pts, 1.0);
    wps.remove(0);
    Ok(wps)
}

fn run_episode(cfg: &ScenarioConfig, field: &ObstacleField, plan_grid: &OccupancyGrid, e: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed) ^ e as u64);
    let r = cfg.sf.radius;
    let min_sep = 2.0 * r + 0.3;
    let mut agents: Vec<SimAgent> = Vec::with_capacity(cfg.agents);
    let free = |p: Vec2| {
        let (x, y) = plan_grid.cell_of(p);
        plan_grid.in_bounds(x, y) && !plan_grid.is_occupied(x, y)
    };
    for k in 0..cfg.agents {
        let mut placed = None;
        for _ in 0..SPAWN_TRIES {
            let region = rng.gen_range(0..cfg.spawn.len());
            let s = cfg.spawn[region].sample(&mut rng);
            let g = cfg.goals[region].sample(&mut rng);
            let clear = agents.iter().all(|a| a.state.position.distance(s) >= min_sep && a.goal.distance(g) >= min_sep);
            if free(s) && free(g) && clear && s.distance(g) > 1.0 {
                placed = Some((s, g));
                break;
            }
        }
        let (s, g) = placed.ok_or_else(|| {
            Error::Config(format!("no free spawn/goal pair for agent {k} after {SPAWN_TRIES} tries"))
        })?;
        let id = (e * cfg.agents + k) as u32;
        let mut a = SimAgent::new(id, AgentState::new(s, Vec2::ZERO), g, cfg.sf);
        a.waypoints = plan_route(plan_grid, s, g, cfg.route_classes, &mut rng)?;
        a.waypoints.pop();
        a.track.push(s);
        agents.push(a);
    }
    let mut world = SimWorld {
        agents,
        field: field.clone(),
        time: 0.0,
        step: 0,
    };
    let h = cfg.dt / cfg.substeps as f64;
    for _ in 0..cfg.episode_steps() {
        if world.agents.iter().all(|a| a.status != AgentStatus::Active) {
            break;
        }
        let was_active: Vec<bool> = world.agents.iter().map(|a| a.status == AgentStatus::Active).collect();
        for _ in 0..cfg.substeps {
            step_simulation(&mut world, h, &mut rng)?;
        }
        for (a, act) in world.agents.iter_mut().zip(was_active) {
            if act {
                a.track.push(a.state.position);
            }
        }
    }
    let start = e as i64 * (cfg.episode_steps() + 5);
    Ok(world
        .agents
        .iter()
        .filter(|a| a.track.len() >= 2)
        .map(|a| Trajectory::from_positions(a.id, start + a.spawn_step, cfg.dt, &a.track))
        .collect())
}

/// Runs every episode of `cfg` and collects the recorded tracks.
/// Episode `e` draws from its own RNG seeded with `splitmix(seed) ^ e`, so
/// the result does not depend on thread scheduling.
pub fn generate_scenario_dataset(cfg: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let field = ObstacleField::new(&cfg.scene);
    let plan_grid = cfg.scene.inflated(cfg.sf.radius + cfg.plan_clearance);
    let episodes: Vec<Result<Vec<Trajectory>>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| run_episode(cfg, &field, &plan_grid, e, seed))
        .collect();
    let mut trajs = Vec::new();
    for ep in episodes {
        trajs.extend(ep?);
    }
    Ok(Dataset::new(trajs, cfg.scene.clone(), cfg.dt))
}
