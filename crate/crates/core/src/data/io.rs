//! Plain-text annotation format: a `# fps=<float>` header followed by one
//! observation per line, `frame_id <TAB> agent_id <TAB> x <TAB> y`, with an
//! optional fifth provenance column (`rec` or `syn:<agent>:<step>`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{AgentState, Dataset, LoadMeta, OccupancyGrid, Provenance, Split, Trajectory};
use crate::error::{Error, Result};
use crate::geom::Vec2;

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub dt: f64,
    pub v_max: f64,
    /// Padding around the trajectories when no map is supplied, meters.
    pub margin: f64,
    /// Resolution of the synthesized free map when no map is supplied.
    pub resolution: f64,
}

impl LoadOptions {
    pub fn with_dt(dt: f64) -> Self {
        LoadOptions {
            dt,
            ..Default::default()
        }
    }
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            dt: crate::DEFAULT_DT,
            v_max: super::DEFAULT_V_MAX,
            margin: 4.0,
            resolution: 0.2,
        }
    }
}

impl Trajectory {
    /// Builds a trajectory from uniformly sampled positions, differencing
    /// velocities centrally (one-sided at the ends).
    pub fn from_positions(agent_id: u32, start_step: i64, dt: f64, positions: &[Vec2]) -> Self {
        Trajectory::new(agent_id, start_step, dt, difference(positions, dt))
    }
}

fn difference(p: &[Vec2], dt: f64) -> Vec<AgentState> {
    let n = p.len();
    (0..n)
        .map(|k| {
            let v = if n < 2 {
                Vec2::ZERO
            } else if k == 0 {
                (p[1] - p[0]) / dt
            } else if k == n - 1 {
                (p[n - 1] - p[n - 2]) / dt
            } else {
                (p[k + 1] - p[k - 1]) / (2.0 * dt)
            };
            AgentState::new(p[k], v)
        })
        .collect()
}

struct Row {
    time: f64,
    pos: Vec2,
}

fn perr(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_provenance(tok: &str) -> Option<Provenance> {
    if tok == "rec" {
        return Some(Provenance::Recorded);
    }
    let mut parts = tok.strip_prefix("syn:")?.split(':');
    let source_agent = parts.next()?.parse().ok()?;
    let source_step = parts.next()?.parse().ok()?;
    parts
        .next()
        .is_none()
        .then_some(Provenance::Synthetic {
            source_agent,
            source_step,
        })
}

/// Parses annotation text into trajectories resampled on the `opts.dt` lattice.
/// The returned dataset's scene is a free map covering the data.
pub fn parse_dataset(text: &str, source: &str, opts: &LoadOptions) -> Result<Dataset> {
    if !(opts.dt > 0.0) {
        return Err(Error::Input(format!("dt must be > 0, got {}", opts.dt)));
    }
    let mut fps: Option<f64> = None;
    let mut agents: BTreeMap<u32, (Provenance, Vec<Row>)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("fps=") {
                let f: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| perr(source, lineno, format!("bad frame rate `{v}`")))?;
                if !(f > 0.0) || !f.is_finite() {
                    return Err(perr(source, lineno, "frame rate must be positive"));
                }
                fps = Some(f);
            }
            continue;
        }
        let fps = fps.ok_or_else(|| perr(source, lineno, "missing `# fps=<float>` header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 && toks.len() != 5 {
            return Err(perr(
                source,
                lineno,
                format!("expected 4 or 5 columns, got {}", toks.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            let v: f64 = toks[j]
                .parse()
                .map_err(|_| perr(source, lineno, format!("non-numeric field `{}`", toks[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(perr(source, lineno, format!("non-finite field `{}`", toks[j])))
            }
        };
        let frame = num(0)?;
        let id = num(1)?;
        if id < 0.0 || id.fract() != 0.0 || id > u32::MAX as f64 {
            return Err(perr(source, lineno, format!("invalid agent id `{}`", toks[1])));
        }
        let prov = match toks.get(4) {
            None => Provenance::Recorded,
            Some(t) => parse_provenance(t)
                .ok_or_else(|| perr(source, lineno, format!("bad provenance `{t}`")))?,
        };
        let row = Row {
            time: frame / fps,
            pos: Vec2::new(num(2)?, num(3)?),
        };
        agents
            .entry(id as u32)
            .or_insert_with(|| (prov, Vec::new()))
            .1
            .push(row);
    }

    let dt = opts.dt;
    let mut meta = LoadMeta::default();
    let mut trajectories = Vec::new();
    for (id, (prov, mut rows)) in agents {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        rows.dedup_by(|b, a| (a.time - b.time).abs() < 1e-12);
        if rows.len() < 2 {
            meta.skipped_agents += 1;
            continue;
        }
        let k0 = (rows[0].time / dt - 1e-9).ceil() as i64;
        let k1 = (rows[rows.len() - 1].time / dt + 1e-9).floor() as i64;
        if k1 - k0 + 1 < 2 {
            meta.skipped_agents += 1;
            continue;
        }
        let mut positions = Vec::with_capacity((k1 - k0 + 1) as usize);
        let mut j = 0;
        for k in k0..=k1 {
            let t = k as f64 * dt;
            while j + 2 < rows.len() && rows[j + 1].time <= t {
                j += 1;
            }
            let (a, b) = (&rows[j], &rows[j + 1]);
            let w = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
            let p = if w < 1e-9 {
                a.pos
            } else if w > 1.0 - 1e-9 {
                b.pos
            } else {
                a.pos.lerp(b.pos, w)
            };
            positions.push(p);
        }
        let mut traj = Trajectory::from_positions(id, k0, dt, &positions);
        if traj.max_speed() > opts.v_max {
            meta.fast_agents += 1;
            continue;
        }
        traj.provenance = prov;
        traj.split = match prov {
            Provenance::Recorded => Split::for_agent(id),
            Provenance::Synthetic { source_agent, .. } => Split::for_agent(source_agent),
        };
        trajectories.push(traj);
    }

    let scene = covering_scene(&trajectories, opts)?;
    Ok(Dataset {
        trajectories,
        scene,
        dt,
        meta,
    })
}

fn covering_scene(trajs: &[Trajectory], opts: &LoadOptions) -> Result<OccupancyGrid> {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in trajs.iter().flat_map(|t| &t.states) {
        min = Vec2::new(min.x.min(s.position.x), min.y.min(s.position.y));
        max = Vec2::new(max.x.max(s.position.x), max.y.max(s.position.y));
    }
    if trajs.is_empty() {
        min = Vec2::ZERO;
        max = Vec2::ZERO;
    }
    OccupancyGrid::covering(min, max, opts.margin, opts.resolution)
}

fn map_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("pgm")
}

/// Loads a dataset file. If `<stem>.pgm` (with its `.meta` sidecar) exists
/// next to it, that map becomes the scene.
pub fn load_dataset(path: impl AsRef<Path>, dt: f64) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_dataset(&text, &path.display().to_string(), &LoadOptions::with_dt(dt))?;
    let map = map_path(path);
    if map.exists() {
        ds.scene = OccupancyGrid::load_pgm(&map)?;
        ds.meta.out_of_bounds = ds
            .trajectories
            .iter()
            .filter(|t| t.states.iter().any(|s| !ds.scene.contains(s.position)))
            .count();
    }
    Ok(ds)
}

/// Serializes in the annotation format (frame ids are lattice steps,
/// `fps = 1/dt`). Rows are ordered by frame, then agent id, so identical
/// datasets produce identical bytes.
pub fn format_dataset(ds: &Dataset) -> String {
    let with_prov = ds.trajectories.iter().any(|t| t.provenance.is_synthetic());
    let mut rows: Vec<(i64, u32, Vec2, Provenance)> = ds
        .trajectories
        .iter()
        .flat_map(|t| {
            let k0 = t.start_step();
            t.states
                .iter()
                .enumerate()
                .map(move |(i, s)| (k0 + i as i64, t.agent_id, s.position, t.provenance))
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    writeln!(out, "# fps={}", 1.0 / ds.dt).unwrap();
    for (k, id, p, prov) in rows {
        write!(out, "{k}\t{id}\t{}\t{}", p.x, p.y).unwrap();
        if with_prov {
            match prov {
                Provenance::Recorded => out.push_str("\trec"),
                Provenance::Synthetic {
                    source_agent,
                    source_step,
                } => write!(out, "\tsyn:{source_agent}:{source_step}").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the dataset file and its scene map (`<stem>.pgm` + sidecar).
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_dataset(ds)).map_err(|e| Error::io(path, e))?;
    ds.scene.save_pgm(&map_path(path))
}
