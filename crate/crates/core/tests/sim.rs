use crowdcast::data::{format_dataset, AgentState, OccupancyGrid};
use crowdcast::sim::{
    generate_scenario_dataset, social_force, step_simulation, AgentStatus, ObstacleField, ScenarioConfig,
    SfParams, SimAgent, SimWorld,
};
use crowdcast::{Error, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn v(x: f64, y: f64) -> Vec2 {
    Vec2::new(x, y)
}

fn quiet() -> SfParams {
    SfParams {
        noise_std: 0.0,
        ..SfParams::default()
    }
}

fn open_world(agents: Vec<SimAgent>) -> SimWorld {
    let grid = OccupancyGrid::new(v(-50.0, -50.0), 0.5, 300, 200).unwrap();
    SimWorld {
        agents,
        field: ObstacleField::new(&grid),
        time: 0.0,
        step: 0,
    }
}

#[test]
fn goal_force_of_agent_at_rest() {
    let p = SfParams::default();
    let f = social_force(0, &AgentState::default(), v(10.0, 0.0), &[], None, &p);
    assert!((f.x - 2.68).abs() < 1e-12 && f.y.abs() < 1e-12);
}

#[test]
fn equilibrium_at_desired_velocity() {
    let p = SfParams::default();
    let me = AgentState::new(v(0.0, 0.0), v(0.0, p.v_des));
    let f = social_force(0, &me, v(0.0, 10.0), &[], None, &p);
    assert!(f.norm() < 1e-12);
}

#[test]
fn head_on_repulsion_magnitude() {
    let p = SfParams { v_des: 1.34, ..SfParams::default() };
    let a = AgentState::new(v(0.0, 0.0), Vec2::ZERO);
    let b = AgentState::new(v(1.0, 0.0), Vec2::ZERO);
    let expect = 2.1 * ((0.6f64 - 1.0) / 0.3).exp();
    // Targets at the agents' own positions: no goal term.
    let fa = social_force(0, &a, a.position, &[(0, a), (1, b)], None, &p);
    let fb = social_force(1, &b, b.position, &[(0, a), (1, b)], None, &p);
    assert!((fa.x + expect).abs() < 1e-12 && fa.y.abs() < 1e-12);
    assert!((fb.x - expect).abs() < 1e-12 && fb.y.abs() < 1e-12);
}

#[test]
fn coincident_agents_get_capped_opposite_pushes() {
    let p = SfParams::default();
    let s = AgentState::new(v(2.0, 2.0), Vec2::ZERO);
    let fa = social_force(4, &s, s.position, &[(9, s)], None, &p);
    let fb = social_force(9, &s, s.position, &[(4, s)], None, &p);
    let cap = p.a * (2.0 * p.radius / p.b).exp();
    assert!((fa.norm() - cap).abs() < 1e-9);
    assert!((fa + fb).norm() < 1e-9);
    assert_eq!(fa, social_force(4, &s, s.position, &[(9, s)], None, &p));
}

#[test]
fn wall_repulsion_uses_nearest_cell_distance() {
    let mut grid = OccupancyGrid::new(Vec2::ZERO, 0.2, 40, 40).unwrap();
    grid.fill_rect(v(0.0, 0.0), v(0.2, 8.0), 1.0);
    let field = ObstacleField::new(&grid);
    let p = SfParams::default();
    let me = AgentState::new(v(1.0, 4.1), Vec2::ZERO);
    let f = social_force(0, &me, me.position, &[], Some(&field), &p);
    let expect = p.a_obs * ((p.radius - 0.8) / p.b_obs).exp();
    assert!((f.x - expect).abs() < 1e-9 && f.y.abs() < 1e-9, "{f:?}");
}

#[test]
fn zero_force_step_advances_position() {
    let p = SfParams { v_des: 1.0, ..quiet() };
    let a = SimAgent::new(0, AgentState::new(v(0.0, 0.0), v(1.0, 0.0)), v(40.0, 0.0), p);
    let mut w = open_world(vec![a]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    step_simulation(&mut w, 0.4, &mut rng).unwrap();
    let s = w.agents[0].state;
    assert!((s.position.x - 0.4).abs() < 1e-12 && s.position.y.abs() < 1e-12);
    assert!((w.time - 0.4).abs() < 1e-12);
}

#[test]
fn speed_is_clamped() {
    let p = SfParams { tau: 0.01, ..quiet() };
    let a = SimAgent::new(0, AgentState::default(), v(40.0, 0.0), p);
    let mut w = open_world(vec![a]);
    step_simulation(&mut w, 0.4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((w.agents[0].state.velocity.norm() - 1.3 * p.v_des).abs() < 1e-12);
}

#[test]
fn invalid_dt_is_rejected() {
    let mut w = open_world(vec![]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for dt in [0.0, -0.1, 0.51, f64::NAN] {
        assert!(matches!(step_simulation(&mut w, dt, &mut rng), Err(Error::Input(_))));
    }
}

#[test]
fn lone_agent_reaches_desired_speed_within_five_tau() {
    let p = quiet();
    let a = SimAgent::new(0, AgentState::default(), v(100.0, 0.0), p);
    let mut w = open_world(vec![a]);
    let dt = 0.05;
    let steps = (5.0 * p.tau / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..steps {
        step_simulation(&mut w, dt, &mut rng).unwrap();
    }
    let speed = w.agents[0].state.velocity.norm();
    assert!((speed - p.v_des).abs() / p.v_des < 0.01, "speed {speed}");
}

#[test]
fn arrival_freezes_agent() {
    let a = SimAgent::new(0, AgentState::new(v(0.0, 0.0), v(1.34, 0.0)), v(1.0, 0.0), quiet());
    let mut w = open_world(vec![a]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        step_simulation(&mut w, 0.1, &mut rng).unwrap();
    }
    let a = &w.agents[0];
    assert_eq!(a.status, AgentStatus::Arrived);
    assert!(a.state.position.distance(a.goal) <= 0.3);
    assert_eq!(a.state.velocity, Vec2::ZERO);
}

#[test]
fn head_on_pair_passes_on_opposite_sides() {
    for seed in 0..5 {
        let p = SfParams::default();
        let a = SimAgent::new(0, AgentState::default(), v(10.0, 0.0), p);
        let b = SimAgent::new(1, AgentState::new(v(10.0, 0.0), Vec2::ZERO), v(0.0, 0.0), p);
        let mut w = open_world(vec![a, b]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min_d = f64::INFINITY;
        let mut passed_with = None;
        for _ in 0..400 {
            let before = w.agents[0].state.position.x - w.agents[1].state.position.x;
            step_simulation(&mut w, 0.1, &mut rng).unwrap();
            let (pa, pb) = (w.agents[0].state.position, w.agents[1].state.position);
            min_d = min_d.min(pa.distance(pb));
            if before < 0.0 && pa.x - pb.x >= 0.0 {
                passed_with = Some(pa.y - pb.y);
            }
        }
        assert!(min_d >= 2.0 * p.radius, "seed {seed}: min distance {min_d}");
        let dy = passed_with.expect("agents never passed each other");
        assert!(dy.abs() >= 2.0 * p.radius - 1e-6, "seed {seed}: lateral gap {dy}");
        assert!(w.agents.iter().all(|a| a.status == AgentStatus::Arrived));
    }
}

#[test]
fn corridor_agent_deviates_and_reaches_goal() {
    let mut cfg = ScenarioConfig::corridor();
    cfg.episodes = 6;
    let ds = generate_scenario_dataset(&cfg, 3).unwrap();
    assert_eq!(ds.len(), 6);
    for tr in &ds.trajectories {
        let pos = tr.positions();
        let last = *pos.last().unwrap();
        assert!((last.x - 22.5).abs() <= 0.3 + 1e-9 && last.y.abs() <= 1.3, "end {last:?}");
        let at_obstacle = pos.iter().filter(|p| (p.x - 12.0).abs() < 0.5).map(|p| p.y.abs());
        assert!(at_obstacle.fold(f64::INFINITY, f64::min) > 1.0 + 0.3 - 1e-6);
        for p in &pos {
            assert!(!(p.x > 11.0 - 0.3 && p.x < 13.0 + 0.3 && p.y.abs() < 1.0));
        }
    }
}

#[test]
fn plaza_episode_is_collision_free() {
    let mut cfg = ScenarioConfig::plaza15();
    cfg.episodes = 2;
    let ds = generate_scenario_dataset(&cfg, 21).unwrap();
    assert_eq!(ds.len(), 30);
    let r = cfg.sf.radius;
    let mut arrived = 0;
    for (i, a) in ds.trajectories.iter().enumerate() {
        for b in &ds.trajectories[i + 1..] {
            for s in a.start_step().max(b.start_step())..=a.end_step().min(b.end_step()) {
                let d = a.at_step(s).unwrap().position.distance(b.at_step(s).unwrap().position);
                assert!(d >= 2.0 * r - 1e-9, "agents {} {} at {s}: {d}", a.agent_id, b.agent_id);
            }
        }
        if a.len() < (cfg.episode_s / cfg.dt) as usize {
            arrived += 1;
        }
    }
    assert!(arrived as f64 >= 0.95 * ds.len() as f64, "{arrived} arrived");
}

#[test]
fn generation_is_deterministic() {
    let cfg = ScenarioConfig::plaza15();
    let a = generate_scenario_dataset(&cfg, 99).unwrap();
    let b = generate_scenario_dataset(&cfg, 99).unwrap();
    assert_eq!(format_dataset(&a), format_dataset(&b));
    assert_eq!(a, b);
    let c = generate_scenario_dataset(&cfg, 100).unwrap();
    assert_ne!(format_dataset(&a), format_dataset(&c));
}
