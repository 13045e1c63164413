use std::collections::VecDeque;

use crate::data::OccupancyGrid;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

/// One representative point per 4-connected occupied component.
#[derive(Debug, Clone, PartialEq)]
pub struct Markers {
    pub points: Vec<Vec2>,
}

impl Markers {
    pub fn new(points: Vec<Vec2>) -> Self {
        Markers { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Component centroids, or the component cell nearest the centroid when
/// the centroid falls outside a non-convex component.
pub fn obstacle_markers(grid: &OccupancyGrid) -> Markers {
    let (w, h) = (grid.width(), grid.height());
    let mut label = vec![usize::MAX; w * h];
    let mut points = Vec::new();
    for start in 0..w * h {
        let (sx, sy) = ((start % w) as i64, (start / w) as i64);
        if label[start] != usize::MAX || !grid.is_occupied(sx, sy) {
            continue;
        }
        let id = points.len();
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(c) = queue.pop_front() {
            cells.push(c);
            let (cx, cy) = ((c % w) as i64, (c / w) as i64);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (cx + dx, cy + dy);
                if grid.in_bounds(nx, ny) {
                    let n = ny as usize * w + nx as usize;
                    if label[n] == usize::MAX && grid.is_occupied(nx, ny) {
                        label[n] = id;
                        queue.push_back(n);
                    }
                }
            }
        }
        let center = |c: usize| grid.cell_center((c % w) as i64, (c / w) as i64);
        let sum = cells.iter().fold(Vec2::ZERO, |acc, &c| acc + center(c));
        let centroid = sum / cells.len() as f64;
        let (mx, my) = grid.cell_of(centroid);
        let inside = grid.in_bounds(mx, my) && label[my as usize * w + mx as usize] == id;
        let marker = if inside {
            centroid
        } else {
            let best = cells
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    center(a)
                        .distance(centroid)
                        .total_cmp(&center(b).distance(centroid))
                        .then(a.cmp(&b))
                })
                .unwrap();
            center(best)
        };
        points.push(marker);
    }
    Markers { points }
}

/// Winding angles and reduced crossing word of a path.
///
/// Letters are `±(k + 1)` for marker `k`; positive means the path crossed
/// the marker's downward ray moving in +x (counter-clockwise about it).
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopySignature {
    pub windings: Vec<f64>,
    pub word: Vec<i32>,
}

impl HomotopySignature {
    /// Class equality: identical reduced words.
    pub fn same_class(&self, other: &HomotopySignature) -> bool {
        self.word == other.word
    }

    pub fn inverse(&self) -> HomotopySignature {
        HomotopySignature {
            windings: self.windings.iter().map(|w| -w).collect(),
            word: self.word.iter().rev().map(|l| -l).collect(),
        }
    }
}

/// Cancels adjacent inverse letters until none remain.
pub fn reduce_word(word: &[i32]) -> Vec<i32> {
    let mut out: Vec<i32> = Vec::with_capacity(word.len());
    for &l in word {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

/// Appends the crossings of segment `a → b` to a reduced `word`, keeping it
/// reduced. Crossings are ordered along the segment, ties by marker index.
pub fn append_crossings(word: &mut Vec<i32>, a: Vec2, b: Vec2, markers: &Markers) {
    let mut hits: Vec<(f64, usize, i32)> = Vec::new();
    for (k, m) in markers.points.iter().enumerate() {
        let (sa, sb) = (a.x >= m.x, b.x >= m.x);
        if sa == sb {
            continue;
        }
        let t = (m.x - a.x) / (b.x - a.x);
        let y = a.y + t * (b.y - a.y);
        if y < m.y {
            let letter = if sb { k as i32 + 1 } else { -(k as i32 + 1) };
            hits.push((t, k, letter));
        }
    }
    hits.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    for (_, _, l) in hits {
        if word.last() == Some(&-l) {
            word.pop();
        } else {
            word.push(l);
        }
    }
}

pub fn homotopy_signature(path: &[Vec2], markers: &Markers) -> Result<HomotopySignature> {
    if path.len() < 2 {
        return Err(Error::Input(format!(
            "homotopy signature needs at least 2 points, got {}",
            path.len()
        )));
    }
    for (i, p) in path.iter().enumerate() {
        for (k, m) in markers.points.iter().enumerate() {
            if p.distance(*m) < 1e-9 {
                return Err(Error::Degenerate(format!(
                    "path point {i} coincides with obstacle marker {k}"
                )));
            }
        }
    }
    let windings = markers
        .points
        .iter()
        .map(|&m| {
            path.windows(2)
                .map(|s| {
                    let (u, v) = (s[0] - m, s[1] - m);
                    wrap_angle(v.y.atan2(v.x) - u.y.atan2(u.x))
                })
                .sum()
        })
        .collect();
    let mut word = Vec::new();
    for s in path.windows(2) {
        append_crossings(&mut word, s[0], s[1], markers);
    }
    Ok(HomotopySignature { windings, word })
}
