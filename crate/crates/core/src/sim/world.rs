use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::field::ObstacleField;
use super::SfParams;
use crate::data::AgentState;
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Distance at which a waypoint or the goal counts as reached, m.
pub const REACH_DIST: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Pending,
    Active,
    Arrived,
}

#[derive(Debug, Clone)]
pub struct SimAgent {
    pub id: u32,
    pub state: AgentState,
    pub goal: Vec2,
    /// Intermediate targets; the goal is appended implicitly.
    pub waypoints: Vec<Vec2>,
    pub next_waypoint: usize,
    pub params: SfParams,
    pub spawn_step: i64,
    pub status: AgentStatus,
    /// Positions recorded once per recording step while active.
    pub track: Vec<Vec2>,
}

impl SimAgent {
    pub fn new(id: u32, state: AgentState, goal: Vec2, params: SfParams) -> Self {
        SimAgent {
            id,
            state,
            goal,
            waypoints: Vec::new(),
            next_waypoint: 0,
            params,
            spawn_step: 0,
            status: AgentStatus::Active,
            track: Vec::new(),
        }
    }

    /// Current steering target.
    pub fn target(&self) -> Vec2 {
        self.waypoints.get(self.next_waypoint).copied().unwrap_or(self.goal)
    }

    fn advance_waypoints(&mut self) {
        while self.next_waypoint < self.waypoints.len()
            && self.state.position.distance(self.waypoints[self.next_waypoint]) <= REACH_DIST
        {
            self.next_waypoint += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub agents: Vec<SimAgent>,
    pub field: ObstacleField,
    pub time: f64,
    pub step: i64,
}

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unit push direction for agent `me` away from a coincident agent `other`.
fn coincident_direction(me: u32, other: u32) -> Vec2 {
    let (lo, hi) = (me.min(other) as u64, me.max(other) as u64);
    let h = splitmix((lo << 32) | hi);
    let theta = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    let d = Vec2::from_angle(theta);
    if me as u64 == lo {
        d
    } else {
        -d
    }
}

/// Total social force (as an acceleration) on agent `id`.
///
/// `others` holds `(id, state)` of every interacting agent; entries with
/// the agent's own id are skipped.
pub fn social_force(
    id: u32,
    me: &AgentState,
    target: Vec2,
    others: &[(u32, AgentState)],
    field: Option<&ObstacleField>,
    p: &SfParams,
) -> Vec2 {
    let desired = match (target - me.position).normalized() {
        Some(dir) => dir * p.v_des,
        None => Vec2::ZERO,
    };
    let mut f = (desired - me.velocity) / p.tau;
    for &(oid, ref o) in others {
        if oid == id {
            continue;
        }
        let delta = me.position - o.position;
        let d = delta.norm();
        if d > 0.0 {
            f += delta / d * (p.a * ((2.0 * p.radius - d) / p.b).exp());
        } else {
            f += coincident_direction(id, oid) * (p.a * (2.0 * p.radius / p.b).exp());
        }
    }
    if let Some((d, n)) = field.and_then(|fl| fl.nearest(me.position)) {
        f += n * (p.a_obs * ((p.radius - d) / p.b_obs).exp());
    }
    f
}

const PROJECTION_PASSES: usize = 50;

/// Advances every active agent by `dt` seconds.
pub fn step_simulation<R: Rng>(world: &mut SimWorld, dt: f64, rng: &mut R) -> Result<()> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(Error::Input(format!("simulation dt must be in (0, 0.5], got {dt}")));
    }
    let active: Vec<usize> = (0..world.agents.len())
        .filter(|&i| world.agents[i].status == AgentStatus::Active)
        .collect();
    let snapshot: Vec<(u32, AgentState)> = active
        .iter()
        .map(|&i| (world.agents[i].id, world.agents[i].state))
        .collect();
    let mut accel = Vec::with_capacity(active.len());
    for &i in &active {
        let a = &world.agents[i];
        let mut f = social_force(a.id, &a.state, a.target(), &snapshot, Some(&world.field), &a.params);
        if a.params.noise_std > 0.0 {
            let n = Normal::new(0.0, a.params.noise_std).expect("valid noise std");
            f += Vec2::new(n.sample(rng), n.sample(rng));
        }
        accel.push(f);
    }
    for (&i, f) in active.iter().zip(accel) {
        let a = &mut world.agents[i];
        let v = (a.state.velocity + f * dt).clamp_norm(a.params.v_max());
        a.state.velocity = v;
        a.state.position += v * dt;
    }
    project_bodies(world, &active);
    for &i in &active {
        let a = &mut world.agents[i];
        a.advance_waypoints();
        if a.state.position.distance(a.goal) <= REACH_DIST {
            a.status = AgentStatus::Arrived;
            a.state.velocity = Vec2::ZERO;
        }
    }
    world.time += dt;
    world.step += 1;
    Ok(())
}

/// Separates overlapping disks and removes approaching velocity.
fn project_bodies(world: &mut SimWorld, active: &[usize]) {
    for _ in 0..PROJECTION_PASSES {
        let mut moved = false;
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let (ri, rj) = (world.agents[i].params.radius, world.agents[j].params.radius);
                let min_d = ri + rj + 1e-6;
                let (pi, pj) = (world.agents[i].state.position, world.agents[j].state.position);
                let delta = pi - pj;
                let d = delta.norm();
                if d >= min_d {
                    continue;
                }
                moved = true;
                let (ii, jj) = (world.agents[i].id, world.agents[j].id);
                let n = if d > 0.0 { delta / d } else { coincident_direction(ii, jj) };
                let push = n * (0.5 * (min_d - d));
                world.agents[i].state.position += push;
                world.agents[j].state.position -= push;
                let rel = (world.agents[i].state.velocity - world.agents[j].state.velocity).dot(n);
                if rel < 0.0 {
                    let dv = n * (0.5 * rel);
                    for (k, s) in [(i, -1.0), (j, 1.0)] {
                        let a = &mut world.agents[k];
                        a.state.velocity = (a.state.velocity + dv * s).clamp_norm(a.params.v_max());
                    }
                }
            }
        }
        if !moved {
            break;
        }
    }
}
