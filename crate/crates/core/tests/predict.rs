mod common;

use approx::assert_abs_diff_eq;
use crowdcast::data::ContextBuilder;
use crowdcast::model::{GmmPrediction, ModelConfig, ModelKind, SocialVrnn};
use crowdcast::predict::*;
use crowdcast::{Error, Vec2};
use proptest::prelude::*;

fn ctx_at(ds: &crowdcast::Dataset, c: &ModelConfig, agent: u32, offset: i64) -> crowdcast::data::QueryContext {
    let start = ds.trajectory(agent).unwrap().start_step();
    ContextBuilder::new(ds, c.t_obs, c.grid).build(agent, start + offset).unwrap()
}

fn constant_pred(modes: usize, horizon: usize, mu: Vec2, sigma: f64) -> GmmPrediction {
    GmmPrediction {
        pi: vec![1.0 / modes as f64; modes],
        mu: vec![vec![mu; horizon]; modes],
        sigma: vec![vec![Vec2::new(sigma, sigma); horizon]; modes],
    }
}

fn arb_pred() -> impl Strategy<Value = GmmPrediction> {
    (1usize..4, 1usize..13).prop_flat_map(|(m, t)| {
        let v = (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y)| Vec2::new(x, y));
        let s = (0.0f64..2.0, 0.0f64..2.0).prop_map(|(x, y)| Vec2::new(x, y));
        (
            proptest::collection::vec(0.01f64..1.0, m),
            proptest::collection::vec(proptest::collection::vec(v, t), m),
            proptest::collection::vec(proptest::collection::vec(s, t), m),
        )
            .prop_map(|(w, mu, sigma)| {
                let z: f64 = w.iter().sum();
                GmmPrediction { pi: w.iter().map(|x| x / z).collect(), mu, sigma }
            })
    })
}

#[test]
fn zero_velocity_and_variance_stay_at_start() {
    let p0 = Vec2::new(2.0, -1.0);
    let pos = propagate_uncertainty(&constant_pred(2, 12, Vec2::ZERO, 0.0), p0, Vec2::ZERO, 0.4).unwrap();
    for m in 0..2 {
        assert!(pos.mean[m].iter().all(|p| *p == p0));
        assert!(pos.var[m].iter().all(|v| *v == Vec2::ZERO));
    }
}

#[test]
fn constant_velocity_displaces_by_sum() {
    let pos = propagate_uncertainty(&constant_pred(1, 12, Vec2::new(1.0, 0.0), 0.1), Vec2::ZERO, Vec2::ZERO, 0.4).unwrap();
    assert_eq!(pos.mean[0].len(), 12);
    assert_abs_diff_eq!(pos.mean[0][11].x, 4.8, epsilon = 1e-12);
    assert_abs_diff_eq!(pos.mean[0][11].y, 0.0, epsilon = 1e-12);
}

#[test]
fn constant_sigma_accumulates_closed_form_variance() {
    let pos = propagate_uncertainty(&constant_pred(3, 12, Vec2::new(0.3, 0.2), 0.5), Vec2::ZERO, Vec2::ZERO, 0.4).unwrap();
    for m in 0..3 {
        assert_abs_diff_eq!(pos.var[m][11].x, 0.48, epsilon = 1e-12);
        assert_abs_diff_eq!(pos.var[m][11].y, 0.48, epsilon = 1e-12);
    }
}

#[test]
fn initial_covariance_is_carried() {
    let pos = propagate_uncertainty(&constant_pred(1, 3, Vec2::ZERO, 1.0), Vec2::ZERO, Vec2::new(0.2, 0.5), 0.5).unwrap();
    assert_abs_diff_eq!(pos.var[0][0].x, 0.45, epsilon = 1e-12);
    assert_abs_diff_eq!(pos.var[0][2].y, 1.25, epsilon = 1e-12);
}

#[test]
fn invalid_step_or_covariance_is_rejected() {
    let p = constant_pred(1, 2, Vec2::ZERO, 1.0);
    for dt in [0.0, -0.4, f64::NAN] {
        assert!(matches!(propagate_uncertainty(&p, Vec2::ZERO, Vec2::ZERO, dt), Err(Error::Input(_))));
    }
    assert!(matches!(propagate_uncertainty(&p, Vec2::ZERO, Vec2::new(-1.0, 0.0), 0.4), Err(Error::Input(_))));
}

#[test]
fn one_shot_prediction_contract() {
    let ds = common::corridor_toy();
    let c = common::toy_config(ModelKind::SocialVrnn);
    let m = SocialVrnn::new(c.clone(), 1).unwrap();
    let ctx = ctx_at(&ds, &c, 2, 12);
    m.reset_counters();
    let a = predict_one_shot(&m, &ctx, SampleMode::PriorMean).unwrap();
    let n = m.call_counts();
    assert_eq!((n.features, n.prior, n.posterior, n.decoder), (1, 1, 0, 1));
    let b = predict_one_shot(&m, &ctx, SampleMode::PriorMean).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.modes(), a.horizon()), (3, 12));
    a.validate().unwrap();

    let s1 = predict_one_shot(&m, &ctx, SampleMode::PriorSample(1)).unwrap();
    let s1b = predict_one_shot(&m, &ctx, SampleMode::PriorSample(1)).unwrap();
    let s2 = predict_one_shot(&m, &ctx, SampleMode::PriorSample(2)).unwrap();
    assert_eq!(s1, s1b);
    assert_ne!(s1, s2);
    assert_ne!(s1, a);
}

#[test]
fn batched_prediction_matches_single() {
    let ds = common::corridor_toy();
    let c = common::toy_config(ModelKind::Storn);
    let m = SocialVrnn::new(c.clone(), 5).unwrap();
    let ctxs: Vec<_> = [(2, 9), (3, 14), (7, 11)].iter().map(|&(a, s)| ctx_at(&ds, &c, a, s)).collect();
    let refs: Vec<_> = ctxs.iter().collect();
    m.reset_counters();
    let batch = predict_batch(&m, &refs, SampleMode::PriorMean).unwrap();
    assert_eq!(m.call_counts().decoder, 1);
    for (ctx, p) in ctxs.iter().zip(&batch) {
        let one = predict_one_shot(&m, ctx, SampleMode::PriorMean).unwrap();
        for mm in 0..3 {
            for k in 0..12 {
                assert_abs_diff_eq!(one.mu[mm][k].x, p.mu[mm][k].x, epsilon = 1e-5);
                assert_abs_diff_eq!(one.sigma[mm][k].y, p.sigma[mm][k].y, epsilon = 1e-5);
            }
        }
    }
}

#[test]
fn wrong_history_length_is_rejected() {
    let ds = common::corridor_toy();
    let c = common::toy_config(ModelKind::SocialVrnn);
    let m = SocialVrnn::new(ModelConfig { t_obs: 4, ..c.clone() }, 1).unwrap();
    let ctx = ctx_at(&ds, &c, 2, 12);
    assert!(matches!(predict_one_shot(&m, &ctx, SampleMode::PriorMean), Err(Error::Shape { .. })));
}

#[test]
fn text_outputs_list_every_step() {
    let p = constant_pred(2, 3, Vec2::new(1.0, 0.5), 0.5);
    let pos = propagate_uncertainty(&p, Vec2::ZERO, Vec2::ZERO, 0.4).unwrap();
    let t = format_prediction(&p, &pos);
    assert_eq!(t.lines().filter(|l| l.starts_with("mode ")).count(), 2);
    assert_eq!(t.lines().count(), 2 * (3 + 2 * 3));
    assert!(t.lines().any(|l| l == "3\t1\t0.5\t0.25\t0.25"));
    let g = gnuplot_dump(&pos, Vec2::ZERO);
    assert_eq!(g.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 2 * 4);
}

proptest! {
    #[test]
    fn mean_path_is_cumulative_sum(pred in arb_pred(), x in -5.0f64..5.0, dt in 0.05f64..1.0) {
        let p0 = Vec2::new(x, -x);
        let pos = propagate_uncertainty(&pred, p0, Vec2::ZERO, dt).unwrap();
        for m in 0..pred.modes() {
            let mut acc = p0;
            for k in 0..pred.horizon() {
                acc += pred.mu[m][k] * dt;
                prop_assert!((pos.mean[m][k] - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_is_non_decreasing(pred in arb_pred(), dt in 0.05f64..1.0) {
        let pos = propagate_uncertainty(&pred, Vec2::ZERO, Vec2::new(0.1, 0.0), dt).unwrap();
        for v in &pos.var {
            for w in v.windows(2) {
                prop_assert!(w[1].x >= w[0].x && w[1].y >= w[0].y);
            }
        }
    }

    #[test]
    fn propagation_commutes_with_mode_permutation(pred in arb_pred(), rot in 0usize..3) {
        let m = pred.modes();
        let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
        let permuted = GmmPrediction {
            pi: perm.iter().map(|&i| pred.pi[i]).collect(),
            mu: perm.iter().map(|&i| pred.mu[i].clone()).collect(),
            sigma: perm.iter().map(|&i| pred.sigma[i].clone()).collect(),
        };
        let a = propagate_uncertainty(&pred, Vec2::ZERO, Vec2::ZERO, 0.4).unwrap();
        let b = propagate_uncertainty(&permuted, Vec2::ZERO, Vec2::ZERO, 0.4).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(&a.mean[i], &b.mean[j]);
            prop_assert_eq!(&a.var[i], &b.var[j]);
            prop_assert_eq!(a.pi[i], b.pi[j]);
        }
    }
}
