//! Domain types, dataset ingestion and model-input construction.

mod context;
mod grid;
mod io;
mod local;

pub use context::{build_query_context, order_neighbors, ContextBuilder, Neighbor, QueryContext};
pub use grid::{OccupancyGrid, OCCUPIED};
pub use io::{format_dataset, load_dataset, parse_dataset, save_dataset, LoadOptions};
pub use local::{crop_local_grid, GridConfig, LocalGrid};

use crate::geom::Vec2;

/// Speed cap applied to ingested data, m/s.
pub const DEFAULT_V_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl AgentState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        AgentState { position, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Recorded,
    /// Alternative-class hypothesis generated from `source_agent`'s
    /// ground truth at global step `source_step`.
    Synthetic { source_agent: u32, source_step: i64 },
}

impl Provenance {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Provenance::Synthetic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    /// Default hold-out rule: every fifth agent id is test, the next one validation.
    pub fn for_agent(id: u32) -> Split {
        match id % 5 {
            0 => Split::Test,
            1 => Split::Val,
            _ => Split::Train,
        }
    }
}

/// Uniformly sampled agent track. Sample `k` is at time `t0 + k*dt`;
/// `t0` is always a multiple of `dt`, so `start_step` indexes a lattice
/// shared by every trajectory in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: u32,
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<AgentState>,
    pub provenance: Provenance,
    pub split: Split,
}

impl Trajectory {
    pub fn new(agent_id: u32, start_step: i64, dt: f64, states: Vec<AgentState>) -> Self {
        assert!(dt > 0.0 && !states.is_empty());
        Trajectory {
            agent_id,
            t0: start_step as f64 * dt,
            dt,
            states,
            provenance: Provenance::Recorded,
            split: Split::for_agent(agent_id),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start_step(&self) -> i64 {
        (self.t0 / self.dt).round() as i64
    }

    /// Last covered step (inclusive).
    pub fn end_step(&self) -> i64 {
        self.start_step() + self.states.len() as i64 - 1
    }

    pub fn covers(&self, step: i64) -> bool {
        step >= self.start_step() && step <= self.end_step()
    }

    pub fn at_step(&self, step: i64) -> Option<&AgentState> {
        if self.covers(step) {
            self.states.get((step - self.start_step()) as usize)
        } else {
            None
        }
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.position).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.states.iter().map(|s| s.velocity.norm()).fold(0.0, f64::max)
    }
}

/// Warnings gathered during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadMeta {
    /// Agents with fewer than two observations.
    pub skipped_agents: usize,
    /// Agents whose resampled speed exceeded the cap.
    pub fast_agents: usize,
    /// Trajectories leaving the scene map.
    pub out_of_bounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub scene: OccupancyGrid,
    pub dt: f64,
    pub meta: LoadMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, scene: OccupancyGrid, dt: f64) -> Self {
        Dataset {
            trajectories,
            scene,
            dt,
            meta: LoadMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectory(&self, agent_id: u32) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.agent_id == agent_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    /// Copy restricted to one split (the scene is shared).
    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            trajectories: self.split(split).cloned().collect(),
            scene: self.scene.clone(),
            dt: self.dt,
            meta: self.meta.clone(),
        }
    }

    pub fn next_free_id(&self) -> u32 {
        self.trajectories.iter().map(|t| t.agent_id + 1).max().unwrap_or(0)
    }
}
