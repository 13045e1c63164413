use super::{AgentState, OccupancyGrid};
use crate::geom::Vec2;

/// Below this speed the heading falls back to the world +x axis.
pub const HEADING_MIN_SPEED: f64 = 1e-3;

/// Local crop geometry: `rows x cols` cells of `resolution` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 32,
            cols: 32,
            resolution: 0.2,
        }
    }
}

/// Agent-centered, heading-aligned occupancy crop. Row index runs along
/// the heading (row `rows-1` is furthest ahead), column index runs to the
/// agent's left.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f64>,
    pub center: Vec2,
    pub heading: Vec2,
}

impl LocalGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    /// Offset of a cell center in the agent frame (forward, left), meters.
    pub fn cell_offset(rows: usize, cols: usize, resolution: f64, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            (row as f64 - rows as f64 / 2.0 + 0.5) * resolution,
            (col as f64 - cols as f64 / 2.0 + 0.5) * resolution,
        )
    }
}

pub fn heading_of(v: Vec2) -> Vec2 {
    if v.norm() < HEADING_MIN_SPEED {
        Vec2::X
    } else {
        v.normalized().unwrap_or(Vec2::X)
    }
}

/// Samples `scene` bilinearly on a heading-aligned lattice centered at the
/// agent. Samples off the map read as occupied.
pub fn crop_local_grid(scene: &OccupancyGrid, state: &AgentState, cfg: &GridConfig) -> LocalGrid {
    let heading = heading_of(state.velocity);
    let left = heading.perp();
    let mut cells = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let off = LocalGrid::cell_offset(cfg.rows, cfg.cols, cfg.resolution, r, c);
            let p = state.position + heading * off.x + left * off.y;
            cells.push(scene.sample_bilinear(p).clamp(0.0, 1.0));
        }
    }
    LocalGrid {
        rows: cfg.rows,
        cols: cfg.cols,
        cells,
        center: state.position,
        heading,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GridConfig {
        GridConfig {
            rows: 16,
            cols: 16,
            resolution: 0.2,
        }
    }

    #[test]
    fn empty_scene_gives_zeros() {
        let scene = OccupancyGrid::new(Vec2::new(-10.0, -10.0), 0.2, 100, 100).unwrap();
        let s = AgentState::new(Vec2::new(1.0, 2.0), Vec2::new(0.3, -1.0));
        let g = crop_local_grid(&scene, &s, &cfg());
        assert!(g.cells.iter().all(|&v| v == 0.0));
        assert_eq!(g.cells.len(), 256);
    }

    #[test]
    fn corner_agent_sees_occupied_outside() {
        let scene = OccupancyGrid::new(Vec2::ZERO, 0.2, 50, 50).unwrap();
        let s = AgentState::new(Vec2::new(0.05, 0.05), Vec2::new(1.0, 0.0));
        let g = crop_local_grid(&scene, &s, &cfg());
        // behind-right quadrant is entirely off the map
        assert_eq!(g.get(0, 0), 1.0);
        // far ahead-left is inside
        assert_eq!(g.get(15, 15), 0.0);
    }

    #[test]
    fn slow_agent_uses_world_x() {
        assert_eq!(heading_of(Vec2::new(1e-4, 5e-4)), Vec2::X);
    }
}
