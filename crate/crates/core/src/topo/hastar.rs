use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::signature::{append_crossings, obstacle_markers, Markers};
use crate::data::OccupancyGrid;
use crate::error::{Error, Result};
use crate::geom::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct HaStarOptions {
    /// Longest reduced word kept during the search.
    pub l_max: usize,
    /// Search gives up after this many state expansions.
    pub max_expansions: usize,
}

impl Default for HaStarOptions {
    fn default() -> Self {
        HaStarOptions {
            l_max: 4,
            max_expansions: 2_000_000,
        }
    }
}

/// One planner result; `points` are the cell centers along `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub cells: Vec<(i64, i64)>,
    pub points: Vec<Vec2>,
    pub cost: f64,
    pub word: Vec<i32>,
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    state: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&o.g))
            .then_with(|| o.state.cmp(&self.state))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const MOVES: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Free 8-neighbours of `(x, y)` without cutting occupied corners, with
/// step lengths in meters.
pub(crate) fn neighbours(grid: &OccupancyGrid, x: i64, y: i64) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
    let res = grid.resolution();
    MOVES.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        if !grid.in_bounds(nx, ny) || grid.is_occupied(nx, ny) {
            return None;
        }
        if dx != 0 && dy != 0 && (grid.is_occupied(x + dx, y) || grid.is_occupied(x, y + dy)) {
            return None;
        }
        let len = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
        Some((nx, ny, len * res))
    })
}

/// Homotopy-aware A*: search over (cell, reduced crossing word) and return
/// up to `m` cheapest paths with pairwise-distinct words, cheapest first.
pub fn ha_star(
    grid: &OccupancyGrid,
    start: (i64, i64),
    goal: (i64, i64),
    m: usize,
    opts: &HaStarOptions,
) -> Result<Vec<PlannedPath>> {
    let markers = obstacle_markers(grid);
    ha_star_with_markers(grid, &markers, start, goal, m, opts)
}

pub(crate) fn ha_star_with_markers(
    grid: &OccupancyGrid,
    markers: &Markers,
    start: (i64, i64),
    goal: (i64, i64),
    m: usize,
    opts: &HaStarOptions,
) -> Result<Vec<PlannedPath>> {
    for (name, c) in [("start", start), ("goal", goal)] {
        if !grid.in_bounds(c.0, c.1) {
            return Err(Error::Input(format!("{name} cell {c:?} is outside the grid")));
        }
        if grid.is_occupied(c.0, c.1) {
            return Err(Error::Input(format!("{name} cell {c:?} is occupied")));
        }
    }
    if m == 0 {
        return Err(Error::Input("ha_star needs M >= 1".into()));
    }
    let goal_pt = grid.cell_center(goal.0, goal.1);
    let h = |x: i64, y: i64| grid.cell_center(x, y).distance(goal_pt);

    let mut words: Vec<Vec<i32>> = vec![Vec::new()];
    let mut word_ids: HashMap<Vec<i32>, usize> = HashMap::from([(Vec::new(), 0)]);
    // State payload: (cell, word id, g, parent state).
    let mut states: Vec<((i64, i64), usize, f64, usize)> = vec![(start, 0, 0.0, usize::MAX)];
    let mut best: HashMap<((i64, i64), usize), usize> = HashMap::from([((start, 0), 0)]);
    let mut closed = vec![false];
    let mut heap = BinaryHeap::from([Entry {
        f: h(start.0, start.1),
        g: 0.0,
        state: 0,
    }]);
    let mut found: Vec<PlannedPath> = Vec::new();
    let mut expansions = 0;

    while let Some(Entry { g, state, .. }) = heap.pop() {
        if closed[state] || g > states[state].2 {
            continue;
        }
        closed[state] = true;
        let (cell, wid, _, _) = states[state];
        if cell == goal && !found.iter().any(|p| p.word == words[wid]) {
            let mut cells = Vec::new();
            let mut s = state;
            while s != usize::MAX {
                cells.push(states[s].0);
                s = states[s].3;
            }
            cells.reverse();
            found.push(PlannedPath {
                points: cells.iter().map(|&(x, y)| grid.cell_center(x, y)).collect(),
                cells,
                cost: g,
                word: words[wid].clone(),
            });
            if found.len() == m {
                break;
            }
        }
        expansions += 1;
        if expansions > opts.max_expansions {
            log::debug!("ha_star: expansion cap reached with {} paths", found.len());
            break;
        }
        let here = grid.cell_center(cell.0, cell.1);
        for (nx, ny, step) in neighbours(grid, cell.0, cell.1) {
            let there = grid.cell_center(nx, ny);
            let mut w = words[wid].clone();
            append_crossings(&mut w, here, there, markers);
            if w.len() > opts.l_max {
                continue;
            }
            let nwid = match word_ids.get(&w) {
                Some(&id) => id,
                None => {
                    words.push(w.clone());
                    word_ids.insert(w, words.len() - 1);
                    words.len() - 1
                }
            };
            let ng = g + step;
            let key = ((nx, ny), nwid);
            match best.get(&key) {
                Some(&s) if states[s].2 <= ng => continue,
                Some(&s) if !closed[s] => {
                    states[s].2 = ng;
                    states[s].3 = state;
                    heap.push(Entry {
                        f: ng + h(nx, ny),
                        g: ng,
                        state: s,
                    });
                }
                Some(_) => {}
                None => {
                    states.push(((nx, ny), nwid, ng, state));
                    closed.push(false);
                    let s = states.len() - 1;
                    best.insert(key, s);
                    heap.push(Entry {
                        f: ng + h(nx, ny),
                        g: ng,
                        state: s,
                    });
                }
            }
        }
    }
    Ok(found)
}
