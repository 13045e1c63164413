//! Social-Forces crowd simulator.
//!
//! Agents are driven toward planner waypoints by a relaxation force and
//! pushed apart by exponential agent-agent and agent-obstacle repulsion.
//! Integration is semi-implicit Euler with a speed cap, followed by a
//! hard-body projection that keeps agent disks from overlapping.

mod field;
mod scenario;
mod world;

pub use field::ObstacleField;
pub use scenario::{generate_scenario_dataset, Rect, ScenarioConfig, SCENARIO_KEYS};
pub use world::{social_force, splitmix, step_simulation, AgentStatus, SimAgent, SimWorld, REACH_DIST};

use crate::error::{Error, Result};

/// Social-Forces parameters for one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfParams {
    /// Relaxation time τ_r, s.
    pub tau: f64,
    /// Desired speed, m/s.
    pub v_des: f64,
    /// Agent interaction strength, m/s².
    pub a: f64,
    /// Agent interaction range, m.
    pub b: f64,
    /// Obstacle strength, m/s².
    pub a_obs: f64,
    /// Obstacle range, m.
    pub b_obs: f64,
    /// Acceleration noise std, m/s².
    pub noise_std: f64,
    /// Body radius, m.
    pub radius: f64,
}

impl Default for SfParams {
    fn default() -> Self {
        SfParams {
            tau: 0.5,
            v_des: 1.34,
            a: 2.1,
            b: 0.3,
            a_obs: 10.0,
            b_obs: 0.2,
            noise_std: 0.1,
            radius: 0.3,
        }
    }
}

impl SfParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tau", self.tau),
            ("v_des", self.v_des),
            ("a", self.a),
            ("b", self.b),
            ("a_obs", self.a_obs),
            ("b_obs", self.b_obs),
            ("radius", self.radius),
        ];
        for (k, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("social-force {k} must be > 0, got {v}")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "social-force noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Speed cap applied after each integration step.
    pub fn v_max(&self) -> f64 {
        1.3 * self.v_des
    }
}
