use crate::data::OccupancyGrid;
use crate::geom::Vec2;

/// Precomputed nearest-occupied-cell lookup.
///
/// Every cell stores the nearest boundary obstacle cell within `reach`
/// meters (by center distance). Queries refine the answer with exact
/// point-to-box distances over the 3×3 block around the query cell.
#[derive(Debug, Clone)]
pub struct ObstacleField {
    grid: OccupancyGrid,
    nearest: Vec<Option<(i64, i64)>>,
}

const DEFAULT_REACH: f64 = 2.5;

impl ObstacleField {
    pub fn new(grid: &OccupancyGrid) -> Self {
        Self::with_reach(grid, DEFAULT_REACH)
    }

    pub fn with_reach(grid: &OccupancyGrid, reach: f64) -> Self {
        let (w, h) = (grid.width() as i64, grid.height() as i64);
        let mut nearest: Vec<Option<(i64, i64)>> = vec![None; (w * h) as usize];
        let mut best = vec![f64::INFINITY; (w * h) as usize];
        let r = (reach / grid.resolution()).ceil() as i64;
        for oy in 0..h {
            for ox in 0..w {
                if !grid.is_occupied(ox, oy) {
                    continue;
                }
                let boundary = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(dx, dy)| grid.in_bounds(ox + dx, oy + dy) && !grid.is_occupied(ox + dx, oy + dy));
                let k = (oy * w + ox) as usize;
                best[k] = 0.0;
                nearest[k] = Some((ox, oy));
                if !boundary {
                    continue;
                }
                for y in (oy - r).max(0)..=(oy + r).min(h - 1) {
                    for x in (ox - r).max(0)..=(ox + r).min(w - 1) {
                        let d2 = ((x - ox).pow(2) + (y - oy).pow(2)) as f64;
                        let k = (y * w + x) as usize;
                        if d2 < best[k] && d2 <= (r * r) as f64 {
                            best[k] = d2;
                            nearest[k] = Some((ox, oy));
                        }
                    }
                }
            }
        }
        ObstacleField {
            grid: grid.clone(),
            nearest,
        }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// Distance from `p` to the nearest occupied cell and the unit vector
    /// pointing from that cell toward `p`; `None` when nothing is in reach.
    pub fn nearest(&self, p: Vec2) -> Option<(f64, Vec2)> {
        let g = &self.grid;
        let (cx, cy) = g.cell_of(p);
        let half = 0.5 * g.resolution();
        let mut out: Option<(f64, Vec2)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if !g.in_bounds(x, y) {
                    continue;
                }
                let Some((ox, oy)) = self.nearest[(y * g.width() as i64 + x) as usize] else {
                    continue;
                };
                let c = g.cell_center(ox, oy);
                let q = Vec2::new(p.x.clamp(c.x - half, c.x + half), p.y.clamp(c.y - half, c.y + half));
                let d = p.distance(q);
                let n = if d > 0.0 {
                    (p - q) / d
                } else {
                    (p - c).normalized().unwrap_or(Vec2::X)
                };
                if out.is_none_or(|(bd, _)| d < bd) {
                    out = Some((d, n));
                }
            }
        }
        out
    }
}
