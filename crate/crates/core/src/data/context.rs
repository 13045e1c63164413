use std::collections::{BTreeMap, HashMap};

use super::{crop_local_grid, Dataset, GridConfig, LocalGrid, Provenance};
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Another agent relative to the query agent at the query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub agent_id: u32,
    pub rel_position: Vec2,
    pub rel_velocity: Vec2,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.rel_position.norm()
    }
}

/// Model input for one agent at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub agent_id: u32,
    pub step: i64,
    pub position: Vec2,
    /// Velocities at steps `step - t_obs ..= step`, oldest first.
    pub past_velocities: Vec<Vec2>,
    /// Ordered by [`order_neighbors`].
    pub neighbors: Vec<Neighbor>,
    pub grid: LocalGrid,
}

impl QueryContext {
    pub fn velocity(&self) -> Vec2 {
        *self.past_velocities.last().expect("context has at least one velocity")
    }
}

/// Farthest first, so the closest neighbor is fed to the recurrent
/// encoder last; equal distances fall back to ascending id.
pub fn order_neighbors(mut neighbors: Vec<Neighbor>) -> Vec<Neighbor> {
    neighbors.sort_by(|a, b| {
        b.distance()
            .total_cmp(&a.distance())
            .then(a.agent_id.cmp(&b.agent_id))
    });
    neighbors
}

/// Step-indexed view of a dataset for repeated context construction.
pub struct ContextBuilder<'a> {
    dataset: &'a Dataset,
    by_id: HashMap<u32, usize>,
    by_step: BTreeMap<i64, Vec<usize>>,
    grid: GridConfig,
    t_obs: usize,
}

impl<'a> ContextBuilder<'a> {
    pub fn new(dataset: &'a Dataset, t_obs: usize, grid: GridConfig) -> Self {
        let mut by_id = HashMap::new();
        let mut by_step: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, t) in dataset.trajectories.iter().enumerate() {
            by_id.insert(t.agent_id, i);
            for k in t.start_step()..=t.end_step() {
                by_step.entry(k).or_default().push(i);
            }
        }
        ContextBuilder {
            dataset,
            by_id,
            by_step,
            grid,
            t_obs,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn t_obs(&self) -> usize {
        self.t_obs
    }

    pub fn build(&self, agent_id: u32, step: i64) -> Result<QueryContext> {
        let &idx = self
            .by_id
            .get(&agent_id)
            .ok_or_else(|| Error::Lookup(format!("agent {agent_id} not in dataset")))?;
        let traj = &self.dataset.trajectories[idx];
        let me = traj
            .at_step(step)
            .ok_or_else(|| Error::Lookup(format!("agent {agent_id} absent at step {step}")))?;
        let first = step - self.t_obs as i64;
        if first < traj.start_step() {
            return Err(Error::Range(format!(
                "agent {agent_id} at step {step}: need {} steps of history, have {}",
                self.t_obs,
                step - traj.start_step()
            )));
        }
        let past_velocities = (first..=step)
            .map(|k| traj.at_step(k).expect("covered").velocity)
            .collect();

        let source = match traj.provenance {
            Provenance::Synthetic { source_agent, .. } => Some(source_agent),
            Provenance::Recorded => None,
        };
        let mut neighbors = Vec::new();
        for &j in self.by_step.get(&step).map(Vec::as_slice).unwrap_or(&[]) {
            let other = &self.dataset.trajectories[j];
            // Hypotheses are not agents: only recorded tracks are neighbors,
            // and a hypothesis never sees its own source.
            if j == idx || other.provenance.is_synthetic() || Some(other.agent_id) == source {
                continue;
            }
            let s = other.at_step(step).expect("indexed by step");
            neighbors.push(Neighbor {
                agent_id: other.agent_id,
                rel_position: s.position - me.position,
                rel_velocity: s.velocity - me.velocity,
            });
        }

        Ok(QueryContext {
            agent_id,
            step,
            position: me.position,
            past_velocities,
            neighbors: order_neighbors(neighbors),
            grid: crop_local_grid(&self.dataset.scene, me, &self.grid),
        })
    }
}

/// Builds the input for `agent_id` at global step `step` with `t_obs` steps of history.
pub fn build_query_context(
    dataset: &Dataset,
    agent_id: u32,
    step: i64,
    t_obs: usize,
    grid: &GridConfig,
) -> Result<QueryContext> {
    ContextBuilder::new(dataset, t_obs, *grid).build(agent_id, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AgentState, OccupancyGrid, Trajectory};

    fn line(id: u32, start: Vec2, v: Vec2, n: usize) -> Trajectory {
        let states = (0..n)
            .map(|k| AgentState::new(start + v * (0.4 * k as f64), v))
            .collect();
        Trajectory::new(id, 0, 0.4, states)
    }

    fn ds(trajs: Vec<Trajectory>) -> Dataset {
        let scene = OccupancyGrid::new(Vec2::new(-20.0, -20.0), 0.2, 200, 200).unwrap();
        Dataset::new(trajs, scene, 0.4)
    }

    fn nb(id: u32, d: f64) -> Neighbor {
        Neighbor {
            agent_id: id,
            rel_position: Vec2::new(d, 0.0),
            rel_velocity: Vec2::ZERO,
        }
    }

    #[test]
    fn ordering_rules() {
        assert!(order_neighbors(vec![]).is_empty());
        let o = order_neighbors(vec![nb(1, 2.0), nb(2, 5.0), nb(3, 1.0)]);
        let d: Vec<f64> = o.iter().map(|n| n.distance()).collect();
        assert_eq!(d, vec![5.0, 2.0, 1.0]);
        let o = order_neighbors(vec![nb(7, 2.0), nb(3, 2.0)]);
        assert_eq!(o[0].agent_id, 3);
    }

    #[test]
    fn single_agent_has_no_neighbors() {
        let d = ds(vec![line(0, Vec2::ZERO, Vec2::X, 20)]);
        let ctx = build_query_context(&d, 0, 8, 8, &GridConfig::default()).unwrap();
        assert!(ctx.neighbors.is_empty());
        assert_eq!(ctx.past_velocities.len(), 9);
    }

    #[test]
    fn relative_neighbor_state() {
        let d = ds(vec![
            line(0, Vec2::ZERO, Vec2::X, 10),
            line(1, Vec2::new(1.0, 0.0), Vec2::X, 10),
        ]);
        let ctx = build_query_context(&d, 0, 3, 2, &GridConfig::default()).unwrap();
        assert_eq!(ctx.neighbors.len(), 1);
        let n = ctx.neighbors[0];
        assert!((n.rel_position - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(n.rel_velocity, Vec2::ZERO);
    }

    #[test]
    fn history_and_presence_errors() {
        let d = ds(vec![line(0, Vec2::ZERO, Vec2::X, 10)]);
        let g = GridConfig::default();
        assert!(matches!(build_query_context(&d, 0, 3, 8, &g), Err(Error::Range(_))));
        assert!(matches!(build_query_context(&d, 0, 30, 2, &g), Err(Error::Lookup(_))));
        assert!(matches!(build_query_context(&d, 5, 3, 2, &g), Err(Error::Lookup(_))));
    }

    #[test]
    fn deterministic_bitwise() {
        let d = ds(vec![
            line(0, Vec2::ZERO, Vec2::new(1.0, 0.3), 12),
            line(4, Vec2::new(2.0, 1.0), Vec2::new(-0.5, 0.0), 12),
            line(2, Vec2::new(-1.0, 3.0), Vec2::new(0.2, -0.7), 12),
        ]);
        let a = build_query_context(&d, 0, 9, 8, &GridConfig::default()).unwrap();
        let b = build_query_context(&d, 0, 9, 8, &GridConfig::default()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn synthetic_tracks_are_not_neighbors_of_their_source() {
        let mut syn = line(9, Vec2::new(0.0, 1.0), Vec2::X, 10);
        syn.provenance = Provenance::Synthetic {
            source_agent: 0,
            source_step: 0,
        };
        let d = ds(vec![
            line(0, Vec2::ZERO, Vec2::X, 10),
            line(1, Vec2::new(3.0, 0.0), Vec2::X, 10),
            syn,
        ]);
        let g = GridConfig::default();
        let ctx0 = build_query_context(&d, 0, 4, 2, &g).unwrap();
        assert_eq!(ctx0.neighbors.iter().map(|n| n.agent_id).collect::<Vec<_>>(), vec![1]);
        let ctx9 = build_query_context(&d, 9, 4, 2, &g).unwrap();
        assert_eq!(ctx9.neighbors.iter().map(|n| n.agent_id).collect::<Vec<_>>(), vec![1]);
    }
}
