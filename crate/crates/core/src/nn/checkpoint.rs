use std::fs;
use std::path::Path;

use super::params::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "CROWDCAST-CKPT 1";

/// Configuration entries plus named parameter tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Layout: a text header (magic line, `config <key> <value>` lines,
/// `param <name> <ndim> <dims..>` lines, a `data` line) followed by the
/// tensors as little-endian `f32` in header order.
pub fn encode_checkpoint(config: &[(String, String)], params: &ParamStore<f32>) -> Vec<u8> {
    let mut head = format!("{CHECKPOINT_MAGIC}\n");
    for (k, v) in config {
        head.push_str(&format!("config {k} {v}\n"));
    }
    for id in params.ids() {
        let t = params.get(id);
        head.push_str(&format!("param {} {}", params.name(id), t.shape().len()));
        for d in t.shape() {
            head.push_str(&format!(" {d}"));
        }
        head.push('\n');
    }
    head.push_str("data\n");
    let mut out = head.into_bytes();
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Checkpoint(format!("{source}: {msg}"));
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        *pos += end + 1;
        String::from_utf8(rest[..end].to_vec()).map_err(|_| bad("header is not UTF-8".into()))
    };
    let magic = next_line(&mut pos)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("unsupported header {magic:?}")));
    }
    let mut config = Vec::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let line = next_line(&mut pos)?;
        let mut it = line.split(' ');
        match it.next() {
            Some("data") => break,
            Some("config") => {
                let k = it.next().ok_or_else(|| bad("config line without key".into()))?;
                let v: Vec<&str> = it.collect();
                config.push((k.to_string(), v.join(" ")));
            }
            Some("param") => {
                let name = it.next().ok_or_else(|| bad("param line without name".into()))?;
                let nums: Vec<usize> = it
                    .map(|s| s.parse().map_err(|_| bad(format!("bad dimension {s:?} for {name}"))))
                    .collect::<Result<_>>()?;
                let (ndim, dims) = nums
                    .split_first()
                    .ok_or_else(|| bad(format!("param {name} has no rank")))?;
                if *ndim != dims.len() {
                    return Err(bad(format!("param {name} rank {ndim} but {} dims", dims.len())));
                }
                shapes.push((name.to_string(), dims.to_vec()));
            }
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let mut params = ParamStore::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let end = pos + 4 * n;
        if end > bytes.len() {
            return Err(bad(format!("data ends inside {name}")));
        }
        let data = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        pos = end;
        params.add(&name, Tensor::new(&shape, data)?);
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(
    path: &Path,
    config: &[(String, String)],
    params: &ParamStore<f32>,
) -> Result<()> {
    fs::write(path, encode_checkpoint(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
