use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Cells at or above this occupancy count as obstacles.
pub const OCCUPIED: f64 = 0.5;

/// Global static map. Cell `(ix, iy)` covers
/// `[origin.x + ix*res, origin.x + (ix+1)*res) x [origin.y + iy*res, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    origin: Vec2,
    resolution: f64,
    width: usize,
    height: usize,
    cells: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(origin: Vec2, resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Input(format!("grid resolution must be > 0, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Input("grid must have at least one cell".into()));
        }
        Ok(OccupancyGrid {
            origin,
            resolution,
            width,
            height,
            cells: vec![0.0; width * height],
        })
    }

    /// Free grid covering `[min, max]` with `margin` meters on each side.
    pub fn covering(min: Vec2, max: Vec2, margin: f64, resolution: f64) -> Result<Self> {
        let origin = Vec2::new(min.x - margin, min.y - margin);
        let w = (((max.x - min.x) + 2.0 * margin) / resolution).ceil().max(1.0) as usize;
        let h = (((max.y - min.y) + 2.0 * margin) / resolution).ceil().max(1.0) as usize;
        Self::new(origin, resolution, w, h)
    }

    pub fn from_cells(
        origin: Vec2,
        resolution: f64,
        width: usize,
        height: usize,
        cells: Vec<f64>,
    ) -> Result<Self> {
        let mut g = Self::new(origin, resolution, width, height)?;
        if cells.len() != width * height {
            return Err(Error::Input(format!(
                "grid expects {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("occupancy {bad} outside [0, 1]")));
        }
        g.cells = cells;
        Ok(g)
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// World-frame upper corner.
    pub fn max_corner(&self) -> Vec2 {
        self.origin
            + Vec2::new(
                self.width as f64 * self.resolution,
                self.height as f64 * self.resolution,
            )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let m = self.max_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x < m.x && p.y < m.y
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Occupancy of a cell; cells outside the map read as occupied.
    pub fn get(&self, ix: i64, iy: i64) -> f64 {
        if self.in_bounds(ix, iy) {
            self.cells[iy as usize * self.width + ix as usize]
        } else {
            1.0
        }
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        assert!((0.0..=1.0).contains(&v), "occupancy {v} outside [0, 1]");
        self.cells[iy * self.width + ix] = v;
    }

    pub fn is_occupied(&self, ix: i64, iy: i64) -> bool {
        self.get(ix, iy) >= OCCUPIED
    }

    pub fn is_free(&self, ix: i64, iy: i64) -> bool {
        !self.is_occupied(ix, iy)
    }

    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        let u = (p - self.origin) / self.resolution;
        (u.x.floor() as i64, u.y.floor() as i64)
    }

    pub fn cell_center(&self, ix: i64, iy: i64) -> Vec2 {
        self.origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    /// Bilinear interpolation between cell centers.
    pub fn sample_bilinear(&self, p: Vec2) -> f64 {
        let u = (p.x - self.origin.x) / self.resolution - 0.5;
        let v = (p.y - self.origin.y) / self.resolution - 0.5;
        let (i0, j0) = (u.floor(), v.floor());
        let (fx, fy) = (u - i0, v - j0);
        let (i0, j0) = (i0 as i64, j0 as i64);
        let v00 = self.get(i0, j0);
        let v10 = self.get(i0 + 1, j0);
        let v01 = self.get(i0, j0 + 1);
        let v11 = self.get(i0 + 1, j0 + 1);
        let a = v00 + (v10 - v00) * fx;
        let b = v01 + (v11 - v01) * fx;
        a + (b - a) * fy
    }

    pub fn fill_rect(&mut self, min: Vec2, max: Vec2, v: f64) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let c = self.cell_center(ix as i64, iy as i64);
                if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                    self.set(ix, iy, v);
                }
            }
        }
    }

    /// Marks every cell whose center lies within `radius` of `center`.
    pub fn fill_disk(&mut self, center: Vec2, radius: f64, v: f64) {
        let (cx, cy) = self.cell_of(center);
        let reach = (radius / self.resolution).ceil() as i64 + 1;
        for iy in (cy - reach)..=(cy + reach) {
            for ix in (cx - reach)..=(cx + reach) {
                if self.in_bounds(ix, iy) && self.cell_center(ix, iy).distance(center) <= radius {
                    self.set(ix as usize, iy as usize, v);
                }
            }
        }
    }

    /// Copy with every occupied cell grown by `radius` meters.
    pub fn inflated(&self, radius: f64) -> OccupancyGrid {
        let mut out = self.clone();
        let reach = (radius / self.resolution).ceil() as i64;
        for iy in 0..self.height as i64 {
            for ix in 0..self.width as i64 {
                if !self.is_occupied(ix, iy) {
                    continue;
                }
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let (nx, ny) = (ix + dx, iy + dy);
                        let d = ((dx * dx + dy * dy) as f64).sqrt() * self.resolution;
                        if self.in_bounds(nx, ny) && d <= radius + 1e-9 {
                            out.cells[ny as usize * self.width + nx as usize] = 1.0;
                        }
                    }
                }
            }
        }
        out
    }

    /// Sub-grid covering `[min, max]` (clipped to the map).
    pub fn crop(&self, min: Vec2, max: Vec2) -> OccupancyGrid {
        let (x0, y0) = self.cell_of(min);
        let (x1, y1) = self.cell_of(max);
        let x0 = x0.clamp(0, self.width as i64 - 1);
        let y0 = y0.clamp(0, self.height as i64 - 1);
        let x1 = x1.clamp(x0, self.width as i64 - 1);
        let y1 = y1.clamp(y0, self.height as i64 - 1);
        let w = (x1 - x0 + 1) as usize;
        let h = (y1 - y0 + 1) as usize;
        let mut cells = Vec::with_capacity(w * h);
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                cells.push(self.get(ix, iy));
            }
        }
        OccupancyGrid {
            origin: self.cell_center(x0, y0) - Vec2::new(0.5, 0.5) * self.resolution,
            resolution: self.resolution,
            width: w,
            height: h,
            cells,
        }
    }

    /// Sidecar path for a PGM map: `<map>.meta`.
    pub fn sidecar_path(pgm: &Path) -> PathBuf {
        let mut s = pgm.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Reads a plain (P2) or binary (P5) PGM plus its `origin_x origin_y resolution`
    /// sidecar. White pixels are free, black are occupied; image row 0 is the top.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let meta_path = Self::sidecar_path(path);
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let nums: Vec<f64> = meta
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(&meta_path, 1, "expected `origin_x origin_y resolution`"))?;
        if nums.len() != 3 {
            return Err(parse_err(&meta_path, 1, "expected `origin_x origin_y resolution`"));
        }
        let (width, height, maxval, pixels) = parse_pgm(&bytes, path)?;
        let mut cells = vec![0.0; width * height];
        for row in 0..height {
            let iy = height - 1 - row;
            for ix in 0..width {
                let v = pixels[row * width + ix] as f64 / maxval as f64;
                cells[iy * width + ix] = (1.0 - v).clamp(0.0, 1.0);
            }
        }
        Self::from_cells(Vec2::new(nums[0], nums[1]), nums[2], width, height, cells)
    }

    /// Writes a binary PGM and its sidecar.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for row in 0..self.height {
            let iy = self.height - 1 - row;
            for ix in 0..self.width {
                let occ = self.cells[iy * self.width + ix];
                out.push(((1.0 - occ) * 255.0).round() as u8);
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let mut meta = String::new();
        writeln!(meta, "{} {} {}", self.origin.x, self.origin.y, self.resolution).unwrap();
        let meta_path = Self::sidecar_path(path);
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, u32, Vec<u32>)> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    // Header: magic, width, height, maxval; '#' comments allowed.
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, 1, "truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let binary = match tokens[0].as_str() {
        "P2" => false,
        "P5" => true,
        m => return Err(parse_err(path, 1, &format!("unsupported PGM magic `{m}`"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(path, 1, &format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, 1, "invalid PGM dimensions"));
    }
    let n = w * h;
    let pixels = if binary {
        pos += 1; // single whitespace after maxval
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let data = bytes
            .get(pos..pos + need)
            .ok_or_else(|| parse_err(path, 1, "truncated PGM raster"))?;
        if wide {
            data.chunks(2).map(|c| u32::from(c[0]) << 8 | u32::from(c[1])).collect()
        } else {
            data.iter().map(|&b| u32::from(b)).collect()
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let vals = text
            .split_whitespace()
            .filter(|t| !t.starts_with('#'))
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(path, 2, "non-numeric PGM raster value"))?;
        if vals.len() < n {
            return Err(parse_err(path, 2, "truncated PGM raster"));
        }
        vals[..n].to_vec()
    };
    if pixels.iter().any(|&p| p > maxval as u32) {
        return Err(parse_err(path, 2, "PGM value exceeds maxval"));
    }
    Ok((w, h, maxval as u32, pixels))
}
