use rayon::prelude::*;

use super::hastar::ha_star_with_markers;
use super::signature::{homotopy_signature, obstacle_markers, HomotopySignature};
use super::HaStarOptions;
use crate::data::{Dataset, OccupancyGrid, Provenance, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{resample_polyline, Vec2};
use crate::sim::{step_simulation, AgentStatus, ObstacleField, SfParams, SimAgent, SimWorld};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Homotopy classes requested from the planner per window.
    pub m: usize,
    /// Future segment length T_H, steps.
    pub horizon: usize,
    /// Observed history T_O, steps.
    pub t_obs: usize,
    /// Unrolled context steps during training; synthetic tracks keep
    /// `t_obs + t_trunc` ground-truth steps before the window start.
    pub t_trunc: usize,
    /// Window stride, steps.
    pub stride: usize,
    pub sf: SfParams,
    pub l_max: usize,
    /// Alternatives longer than this multiple of the cheapest are dropped.
    pub detour_cap: f64,
    /// Crop margin around the ground-truth segment, m.
    pub crop_margin: f64,
    /// Planning clearance beyond the body radius, m.
    pub clearance: f64,
    pub substeps: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            m: 2,
            horizon: 12,
            t_obs: 8,
            t_trunc: 8,
            stride: 8,
            sf: SfParams {
                noise_std: 0.0,
                ..SfParams::default()
            },
            l_max: 4,
            detour_cap: 2.0,
            crop_margin: 3.0,
            clearance: 0.1,
            substeps: 4,
        }
    }
}

impl AugmentConfig {
    fn prefix(&self) -> usize {
        self.t_obs + self.t_trunc
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentStats {
    pub windows: usize,
    pub planner_failures: usize,
    /// Candidate paths whose smoothed trajectory changed class or
    /// duplicated an existing one.
    pub rejected: usize,
    pub added: usize,
}

struct WindowResult {
    source: u32,
    step: i64,
    tracks: Vec<Vec<Vec2>>,
    failed: bool,
    rejected: usize,
}

fn nearest_free(grid: &OccupancyGrid, p: Vec2, max_dist: f64) -> Option<(i64, i64)> {
    let (cx, cy) = grid.cell_of(p);
    let reach = (max_dist / grid.resolution()).ceil() as i64;
    let mut best: Option<((i64, i64), f64)> = None;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (cx + dx, cy + dy);
            if grid.in_bounds(x, y) && !grid.is_occupied(x, y) {
                let d = grid.cell_center(x, y).distance(p);
                if d <= max_dist && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some(((x, y), d));
                }
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Drives a noise-free Social-Forces agent along `path` for `steps` steps.
fn smooth_path(
    path: &[Vec2],
    start: crate::data::AgentState,
    field: &ObstacleField,
    cfg: &AugmentConfig,
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec2>> {
    let goal = *path.last().unwrap();
    let mut pts = path.to_vec();
    pts[0] = start.position;
    let mut wps = resample_polyline(&pts, 1.0);
    wps.remove(0);
    wps.pop();
    let mut agent = SimAgent::new(0, start, goal, cfg.sf);
    agent.waypoints = wps;
    let mut world = SimWorld {
        agents: vec![agent],
        field: field.clone(),
        time: 0.0,
        step: 0,
    };
    let h = dt / cfg.substeps as f64;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        for _ in 0..cfg.substeps {
            if world.agents[0].status == AgentStatus::Active {
                step_simulation(&mut world, h, &mut rng)?;
            }
        }
        out.push(world.agents[0].state.position);
    }
    Ok(out)
}

fn process_window(ds: &Dataset, tr: &Trajectory, t: i64, cfg: &AugmentConfig) -> Result<WindowResult> {
    let mut res = WindowResult {
        source: tr.agent_id,
        step: t,
        tracks: Vec::new(),
        failed: false,
        rejected: 0,
    };
    let seg: Vec<Vec2> = (t..=t + cfg.horizon as i64)
        .map(|s| tr.at_step(s).expect("window inside track").position)
        .collect();
    let (mut lo, mut hi) = (seg[0], seg[0]);
    for p in &seg {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let m = Vec2::new(cfg.crop_margin, cfg.crop_margin);
    let mut grid = ds.scene.crop(lo - m, hi + m);
    for other in &ds.trajectories {
        if other.agent_id == tr.agent_id || other.provenance.is_synthetic() {
            continue;
        }
        if let Some(s) = other.at_step(t) {
            grid.fill_disk(s.position, cfg.sf.radius, 1.0);
        }
    }
    let plan = grid.inflated(cfg.sf.radius + cfg.clearance);
    let markers = obstacle_markers(&plan);
    if markers.is_empty() {
        return Ok(res);
    }
    let gt_sig = match homotopy_signature(&seg, &markers) {
        Ok(s) => s,
        Err(_) => {
            res.failed = true;
            return Ok(res);
        }
    };
    let snap = 0.6;
    let (Some(start), Some(goal)) = (
        nearest_free(&plan, seg[0], snap),
        nearest_free(&plan, *seg.last().unwrap(), snap),
    ) else {
        res.failed = true;
        return Ok(res);
    };
    let opts = HaStarOptions {
        l_max: cfg.l_max,
        ..HaStarOptions::default()
    };
    let paths = ha_star_with_markers(&plan, &markers, start, goal, cfg.m + 1, &opts)?;
    if paths.is_empty() {
        res.failed = true;
        return Ok(res);
    }
    let best_cost = paths[0].cost;
    let field = ObstacleField::new(&grid);
    let mut seen: Vec<HomotopySignature> = vec![gt_sig.clone()];
    let start_state = *tr.at_step(t).unwrap();
    for p in &paths {
        if res.tracks.len() + 1 >= cfg.m {
            break;
        }
        if p.word == gt_sig.word || p.cost > cfg.detour_cap * best_cost {
            continue;
        }
        let mut pts = p.points.clone();
        *pts.last_mut().unwrap() = *seg.last().unwrap();
        let fut = smooth_path(&pts, start_state, &field, cfg, ds.dt, cfg.horizon)?;
        let mut full = vec![seg[0]];
        full.extend_from_slice(&fut);
        let ok = match homotopy_signature(&full, &markers) {
            Ok(sig) => sig.word == p.word && !seen.iter().any(|s| s.same_class(&sig)),
            Err(_) => false,
        };
        if ok {
            seen.push(HomotopySignature {
                windings: Vec::new(),
                word: p.word.clone(),
            });
            res.tracks.push(fut);
        } else {
            res.rejected += 1;
        }
    }
    Ok(res)
}

/// Adds alternative-homotopy-class trajectories for every recorded agent
/// window. Each window of `horizon` steps starting at `t` is replanned
/// with HA* on the static map plus the other agents at `t` (as disks),
/// every new-class plan is smoothed by a Social-Forces agent, and the
/// result is appended as a synthetic track that shares the ground-truth
/// history before `t`.
pub fn augment_dataset(ds: &Dataset, cfg: &AugmentConfig) -> Result<(Dataset, AugmentStats)> {
    if cfg.m < 2 {
        return Err(Error::Config(format!("augmentation needs M >= 2, got {}", cfg.m)));
    }
    if cfg.horizon == 0 || cfg.stride == 0 || cfg.substeps == 0 {
        return Err(Error::Config("horizon, stride and substeps must be >= 1".into()));
    }
    cfg.sf.validate()?;
    let mut jobs: Vec<(usize, i64)> = Vec::new();
    for (k, tr) in ds.trajectories.iter().enumerate() {
        if tr.provenance.is_synthetic() {
            continue;
        }
        let mut t = tr.start_step() + cfg.prefix() as i64 - 1;
        while t + cfg.horizon as i64 <= tr.end_step() {
            jobs.push((k, t));
            t += cfg.stride as i64;
        }
    }
    let results: Vec<Result<WindowResult>> = jobs
        .par_iter()
        .map(|&(k, t)| process_window(ds, &ds.trajectories[k], t, cfg))
        .collect();
    let mut out = ds.clone();
    let mut stats = AugmentStats {
        windows: jobs.len(),
        ..AugmentStats::default()
    };
    let mut next_id = ds.next_free_id();
    for r in results {
        let r = r?;
        stats.planner_failures += r.failed as usize;
        stats.rejected += r.rejected;
        let src = ds.trajectory(r.source).expect("source track");
        let first = r.step - cfg.prefix() as i64 + 1;
        for fut in r.tracks {
            let mut pos: Vec<Vec2> = (first..=r.step).map(|s| src.at_step(s).unwrap().position).collect();
            pos.extend(fut);
            let mut syn = Trajectory::from_positions(next_id, first, ds.dt, &pos);
            syn.provenance = Provenance::Synthetic {
                source_agent: r.source,
                source_step: r.step,
            };
            syn.split = src.split;
            out.trajectories.push(syn);
            next_id += 1;
            stats.added += 1;
        }
    }
    Ok((out, stats))
}
