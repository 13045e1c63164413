//! Fixtures shared by the benchmarks.

use crowdcast::data::ContextBuilder;
use crowdcast::sim::{generate_scenario_dataset, ScenarioConfig};
use crowdcast::{ModelConfig, OccupancyGrid, QueryContext, SocialVrnn, Vec2};

/// Default-size model and a mid-track query from a simulated plaza.
pub fn default_model_and_context() -> (SocialVrnn, QueryContext) {
    let mut sc = ScenarioConfig::plaza15();
    sc.episodes = 1;
    let ds = generate_scenario_dataset(&sc, 3).expect("plaza simulates");
    let c = ModelConfig::default();
    let tr = ds
        .trajectories
        .iter()
        .max_by_key(|t| t.len())
        .expect("non-empty dataset");
    let step = tr.start_step() + c.t_obs as i64;
    let ctx = ContextBuilder::new(&ds, c.t_obs, c.grid)
        .build(tr.agent_id, step)
        .expect("context");
    (SocialVrnn::new(c, 0).expect("default config"), ctx)
}

/// Open 20 m square with a block in the middle, 0.2 m cells.
pub fn blocked_square() -> OccupancyGrid {
    let mut g = OccupancyGrid::new(Vec2::ZERO, 0.2, 100, 100).expect("static grid");
    g.fill_rect(Vec2::new(8.0, 8.0), Vec2::new(12.0, 12.0), 1.0);
    g
}
