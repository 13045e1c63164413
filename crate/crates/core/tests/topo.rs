use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;

use crowdcast::data::{Dataset, OccupancyGrid, Provenance, Trajectory};
use crowdcast::sim::{generate_scenario_dataset, ScenarioConfig};
use crowdcast::topo::{
    augment_dataset, ha_star, homotopy_signature, obstacle_markers, reduce_word, AugmentConfig,
    HaStarOptions, Markers,
};
use crowdcast::{Error, Vec2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: f64, y: f64) -> Vec2 {
    Vec2::new(x, y)
}

fn open_grid(w: usize, h: usize) -> OccupancyGrid {
    OccupancyGrid::new(Vec2::ZERO, 0.5, w, h).unwrap()
}

/// Net signed ray crossings per marker, counted on a densely subdivided path.
fn net_crossings_oracle(path: &[Vec2], markers: &Markers) -> Vec<i32> {
    let mut dense = Vec::new();
    for s in path.windows(2) {
        for k in 0..200 {
            dense.push(s[0].lerp(s[1], k as f64 / 200.0));
        }
    }
    dense.push(*path.last().unwrap());
    markers
        .points
        .iter()
        .map(|m| {
            let mut n = 0;
            for s in dense.windows(2) {
                let (l0, l1) = (s[0].x < m.x, s[1].x < m.x);
                let t = (m.x - s[0].x) / (s[1].x - s[0].x);
                let below = s[0].y + t * (s[1].y - s[0].y) < m.y;
                if l0 != l1 && below {
                    n += if l0 { 1 } else { -1 };
                }
            }
            n
        })
        .collect()
}

fn letter_sums(word: &[i32], n: usize) -> Vec<i32> {
    let mut out = vec![0; n];
    for &l in word {
        out[l.unsigned_abs() as usize - 1] += l.signum();
    }
    out
}

#[test]
fn straight_segment_far_from_markers_has_trivial_signature() {
    let m = Markers::new(vec![v(0.0, -1000.0), v(20.0, 3.0)]);
    let s = homotopy_signature(&[v(-3.0, 0.0), v(8.0, 0.0)], &m).unwrap();
    assert!(s.word.is_empty());
    assert!(s.windings[0].abs() < 0.02);
    let far = homotopy_signature(&[v(-3.0, 0.0), v(-3.0, 1.0)], &Markers::new(vec![v(100.0, 100.0)])).unwrap();
    assert!(far.word.is_empty() && far.windings[0].abs() < 1e-2);
}

#[test]
fn ccw_unit_circle_winds_two_pi() {
    let c = v(3.0, -2.0);
    let path: Vec<Vec2> = (0..=360)
        .map(|k| c + Vec2::from_angle(2.0 * PI * k as f64 / 360.0))
        .collect();
    let s = homotopy_signature(&path, &Markers::new(vec![c])).unwrap();
    assert!((s.windings[0] - 2.0 * PI).abs() < 1e-9, "{}", s.windings[0]);
    assert_eq!(s.word, vec![1]);
    let twice: Vec<Vec2> = (0..=720)
        .map(|k| c + Vec2::from_angle(-2.0 * PI * k as f64 / 360.0))
        .collect();
    let s2 = homotopy_signature(&twice, &Markers::new(vec![c])).unwrap();
    assert!((s2.windings[0] + 4.0 * PI).abs() < 1e-9);
    assert_eq!(s2.word, vec![-1, -1]);
}

#[test]
fn degenerate_and_short_paths_are_rejected() {
    let m = Markers::new(vec![v(1.0, 1.0)]);
    assert!(matches!(homotopy_signature(&[v(0.0, 0.0)], &m), Err(Error::Input(_))));
    let err = homotopy_signature(&[v(0.0, 0.0), v(1.0, 1.0 + 1e-12), v(2.0, 0.0)], &m).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
}

#[test]
fn reduce_word_cancels_nested_inverses() {
    assert_eq!(reduce_word(&[1, 2, -2, -1, 3]), vec![3]);
    assert_eq!(reduce_word(&[1, -2, 2, 2]), vec![1, 2]);
    assert!(reduce_word(&[]).is_empty());
}

#[test]
fn markers_one_per_component_inside_it() {
    let mut g = open_grid(40, 40);
    g.fill_rect(v(2.0, 2.0), v(4.0, 4.0), 1.0);
    g.fill_rect(v(10.0, 10.0), v(12.0, 11.0), 1.0);
    // L shape: centroid falls outside the component.
    g.fill_rect(v(14.0, 2.0), v(19.0, 3.0), 1.0);
    g.fill_rect(v(14.0, 2.0), v(15.0, 8.0), 1.0);
    // Diagonal touch only: two 4-connected components.
    g.set(30, 30, 1.0);
    g.set(31, 31, 1.0);
    let m = obstacle_markers(&g);
    assert_eq!(m.len(), 5);
    for p in &m.points {
        let (x, y) = g.cell_of(*p);
        assert!(g.is_occupied(x, y), "marker {p:?} not inside an occupied cell");
    }
}

fn single_obstacle_grid() -> OccupancyGrid {
    let mut g = open_grid(40, 24);
    g.fill_rect(v(8.0, 4.0), v(12.0, 8.0), 1.0);
    g
}

#[test]
fn empty_grid_yields_one_path() {
    let g = open_grid(30, 20);
    let paths = ha_star(&g, (1, 10), (28, 10), 3, &HaStarOptions::default()).unwrap();
    assert_eq!(paths.len(), 1);
    assert!(paths[0].word.is_empty());
    assert!((paths[0].cost - 27.0 * 0.5).abs() < 1e-9);
}

#[test]
fn single_obstacle_gives_two_paths_one_per_side() {
    let g = single_obstacle_grid();
    let markers = obstacle_markers(&g);
    let paths = ha_star(&g, (2, 12), (37, 12), 2, &HaStarOptions::default()).unwrap();
    assert_eq!(paths.len(), 2);
    assert_ne!(paths[0].word, paths[1].word);
    let mut sides = Vec::new();
    for p in &paths {
        let sig = homotopy_signature(&p.points, &markers).unwrap();
        assert_eq!(sig.word, p.word);
        for &(x, y) in &p.cells {
            assert!(!g.is_occupied(x, y));
        }
        let mid = p.points.iter().find(|q| (q.x - 10.0).abs() < 0.3).unwrap();
        sides.push(mid.y > 6.0);
    }
    assert_ne!(sides[0], sides[1]);
}

#[test]
fn planner_input_errors() {
    let g = single_obstacle_grid();
    let o = HaStarOptions::default();
    assert!(matches!(ha_star(&g, (20, 12), (37, 12), 2, &o), Err(Error::Input(_))));
    assert!(matches!(ha_star(&g, (-1, 12), (37, 12), 2, &o), Err(Error::Input(_))));
    assert!(matches!(ha_star(&g, (2, 12), (37, 12), 0, &o), Err(Error::Input(_))));
    let mut wall = open_grid(20, 10);
    wall.fill_rect(v(5.0, 0.0), v(5.5, 5.0), 1.0);
    assert!(ha_star(&wall, (1, 5), (18, 5), 2, &o).unwrap().is_empty());
}

/// Exhaustive Dijkstra over (cell, reduced word) without a heuristic;
/// returns the cheapest cost of each distinct word at the goal.
fn dijkstra_classes(g: &OccupancyGrid, start: (i64, i64), goal: (i64, i64), l_max: usize) -> Vec<(Vec<i32>, f64)> {
    let markers = obstacle_markers(g);
    #[derive(PartialEq)]
    struct E(f64, (i64, i64), Vec<i32>);
    impl Eq for E {}
    impl Ord for E {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    impl PartialOrd for E {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    let mut best: HashMap<((i64, i64), Vec<i32>), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(E(0.0, start, vec![]));
    let mut out: Vec<(Vec<i32>, f64)> = Vec::new();
    while let Some(E(d, c, w)) = heap.pop() {
        if best.get(&(c, w.clone())).is_some_and(|&b| b < d) {
            continue;
        }
        if c == goal && !out.iter().any(|(ow, _)| *ow == w) {
            out.push((w.clone(), d));
        }
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let n = (c.0 + dx, c.1 + dy);
            if !g.in_bounds(n.0, n.1) || g.is_occupied(n.0, n.1) {
                continue;
            }
            if dx != 0 && dy != 0 && (g.is_occupied(c.0 + dx, c.1) || g.is_occupied(c.0, c.1 + dy)) {
                continue;
            }
            let step = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 } * g.resolution();
            let mut nw = w.clone();
            // Segment crossings via the brute-force oracle, then reduce.
            let seg = [g.cell_center(c.0, c.1), g.cell_center(n.0, n.1)];
            for (k, &s) in net_crossings_oracle(&seg, &markers).iter().enumerate() {
                if s != 0 {
                    nw.push(s * (k as i32 + 1));
                }
            }
            let nw = reduce_word(&nw);
            if nw.len() > l_max {
                continue;
            }
            let nd = d + step;
            let key = (n, nw.clone());
            if best.get(&key).is_none_or(|&b| nd < b - 1e-12) {
                best.insert(key, nd);
                heap.push(E(nd, n, nw));
            }
        }
    }
    out
}

#[test]
fn ha_star_matches_product_space_dijkstra() {
    let mut g = OccupancyGrid::new(Vec2::ZERO, 1.0, 14, 10).unwrap();
    g.fill_rect(v(5.0, 4.0), v(8.0, 6.0), 1.0);
    let (s, t) = ((1, 5), (12, 5));
    let oracle = dijkstra_classes(&g, s, t, 4);
    let got = ha_star(&g, s, t, 3, &HaStarOptions::default()).unwrap();
    assert_eq!(got.len(), 3);
    for (p, (w, c)) in got.iter().zip(&oracle) {
        assert!((p.cost - c).abs() < 1e-9, "cost {} vs oracle {}", p.cost, c);
        assert_eq!(&p.word, w);
    }
}

#[test]
fn random_layouts_match_crossing_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for layout in 0..50 {
        let mut g = open_grid(40, 24);
        let cx = rng.gen_range(7.0..13.0);
        let cy = rng.gen_range(4.5..7.5);
        let hw = rng.gen_range(0.5..2.0);
        let hh = rng.gen_range(0.5..2.5);
        g.fill_rect(v(cx - hw, cy - hh), v(cx + hw, cy + hh), 1.0);
        for _ in 0..rng.gen_range(0..3) {
            let x = rng.gen_range(1.0..18.0);
            let y = if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { rng.gen_range(10.5..11.5) };
            g.fill_rect(v(x, y), v(x + 0.5, y + 0.5), 1.0);
        }
        let markers = obstacle_markers(&g);
        let paths = ha_star(&g, (1, 12), (38, 12), 2, &HaStarOptions::default()).unwrap();
        assert!(paths.len() >= 2, "layout {layout}");
        for p in &paths {
            let sig = homotopy_signature(&p.points, &markers).unwrap();
            assert_eq!(sig.word, p.word);
            assert_eq!(
                letter_sums(&sig.word, markers.len()),
                net_crossings_oracle(&p.points, &markers),
                "layout {layout}"
            );
        }
        assert_ne!(paths[0].word, paths[1].word);
        let ys: Vec<f64> = paths
            .iter()
            .map(|p| p.points.iter().min_by(|a, b| (a.x - cx).abs().total_cmp(&(b.x - cx).abs())).unwrap().y)
            .collect();
        assert!((ys[0] - cy) * (ys[1] - cy) < 0.0, "layout {layout}: {ys:?}");
    }
}

#[test]
fn deformations_preserve_class_until_crossing_the_obstacle() {
    let m = Markers::new(vec![v(0.0, 0.0)]);
    let family = |c: f64| -> Vec<Vec2> {
        (0..=100)
            .map(|k| {
                let s = k as f64 / 100.0;
                v(-5.0 + 10.0 * s, c * (PI * s).sin())
            })
            .collect()
    };
    let above = homotopy_signature(&family(0.5), &m).unwrap();
    for k in 1..=30 {
        let s = homotopy_signature(&family(0.5 + 0.1 * k as f64), &m).unwrap();
        assert!(s.same_class(&above));
        assert!((s.windings[0] - above.windings[0]).abs() < 1e-9);
    }
    let below = homotopy_signature(&family(-1.0), &m).unwrap();
    assert!(!below.same_class(&above));
    assert!((above.windings[0] + PI).abs() < 1e-9);
    assert!((below.windings[0] - PI).abs() < 1e-9);
}

proptest! {
    #[test]
    fn reversal_inverts_signature(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12),
        ms in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..4),
    ) {
        let path: Vec<Vec2> = pts.iter().map(|&(x, y)| v(x, y)).collect();
        let markers = Markers::new(ms.iter().map(|&(x, y)| v(x + 0.013, y + 0.017)).collect());
        let fwd = homotopy_signature(&path, &markers);
        prop_assume!(fwd.is_ok());
        let fwd = fwd.unwrap();
        let mut rev_path = path.clone();
        rev_path.reverse();
        let rev = homotopy_signature(&rev_path, &markers).unwrap();
        let inv = fwd.inverse();
        prop_assert_eq!(&rev.word, &inv.word);
        for (a, b) in rev.windings.iter().zip(&inv.windings) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert_eq!(letter_sums(&fwd.word, markers.len()), net_crossings_oracle(&path, &markers));
    }
}

#[test]
fn augmenting_a_lone_agent_in_an_empty_scene_is_identity() {
    let pos: Vec<Vec2> = (0..40).map(|k| v(1.0 + 0.5 * k as f64, 5.0)).collect();
    let ds = Dataset::new(
        vec![Trajectory::from_positions(3, 0, 0.4, &pos)],
        open_grid(60, 20),
        0.4,
    );
    let (out, stats) = augment_dataset(&ds, &AugmentConfig::default()).unwrap();
    assert_eq!(out, ds);
    assert_eq!(stats.added, 0);
    assert!(stats.windows > 0);
    assert!(matches!(
        augment_dataset(&ds, &AugmentConfig { m: 1, ..AugmentConfig::default() }),
        Err(Error::Config(_))
    ));
}

fn lateral_at(path: &[Vec2], x: f64) -> Option<f64> {
    path.windows(2).find(|s| (s[0].x - x) * (s[1].x - x) <= 0.0 && s[0].x != s[1].x).map(|s| {
        let t = (x - s[0].x) / (s[1].x - s[0].x);
        s[0].y + t * (s[1].y - s[0].y)
    })
}

#[test]
fn corridor_decision_windows_gain_opposite_side_hypotheses() {
    let cfg = ScenarioConfig::corridor();
    let ds = generate_scenario_dataset(&cfg, 5).unwrap();
    let aug = AugmentConfig::default();
    let (out, stats) = augment_dataset(&ds, &aug).unwrap();
    assert_eq!(out.len(), ds.len() + stats.added);
    let v_cap = aug.sf.v_max() + 1e-9;
    let markers = obstacle_markers(&ds.scene.inflated(0.4));
    let mut decision = 0;
    for tr in &ds.trajectories {
        let mut t = tr.start_step() + 15;
        while t + 12 <= tr.end_step() {
            let seg: Vec<Vec2> = (t..=t + 12).map(|s| tr.at_step(s).unwrap().position).collect();
            let syn: Vec<&Trajectory> = out
                .trajectories
                .iter()
                .filter(|s| s.provenance == Provenance::Synthetic { source_agent: tr.agent_id, source_step: t })
                .collect();
            assert!(syn.len() <= 1);
            let gt_sig = homotopy_signature(&seg, &markers).unwrap();
            for s in &syn {
                assert_eq!(s.split, tr.split);
                assert_eq!(s.start_step(), t - 15);
                assert_eq!(s.end_step(), t + 12);
                assert!(s.max_speed() <= v_cap);
                let fut: Vec<Vec2> = (t..=t + 12).map(|k| s.at_step(k).unwrap().position).collect();
                assert!(!homotopy_signature(&fut, &markers).unwrap().same_class(&gt_sig));
            }
            if seg[0].x < 11.0 && seg[12].x > 13.0 {
                decision += 1;
                assert_eq!(syn.len(), 1, "agent {} window {t}", tr.agent_id);
                let fut: Vec<Vec2> = (t..=t + 12).map(|k| syn[0].at_step(k).unwrap().position).collect();
                let (yg, ys) = (lateral_at(&seg, 12.0).unwrap(), lateral_at(&fut, 12.0).unwrap());
                assert!(yg * ys < 0.0, "agent {} gt {yg} synthetic {ys}", tr.agent_id);
            }
            t += 8;
        }
    }
    assert!(decision >= 20, "only {decision} decision windows");
}
