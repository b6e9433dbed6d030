//! Checkpoint layout (little-endian):
//!
//! ```text
//! "FMCK" | version u32 | config_len u32 | config JSON bytes (model config + run metadata)
//! | n_tensors u32 | n × (name_len u32 | name | rows u32 | cols u32 | rows·cols f32)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{ModelConfig, Parameters};
use crate::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_NAME: u32 = 4096;
const MAX_CONFIG: u32 = 1 << 20;

fn fmt(field: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        field,
        message: message.into(),
    }
}

/// Run metadata stored beside the model config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: Option<u64>,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    pub meta: CheckpointMeta,
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    cfg: &ModelConfig,
    params: &Parameters,
    meta: CheckpointMeta,
) -> Result<()> {
    let io = |e| Error::io("<checkpoint stream>", e);
    let header = Header {
        model: cfg.clone(),
        meta,
    };
    let cfg_json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&cfg_json).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes())
        .map_err(io)?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.nrows() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(t.ncols() as u32).to_le_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| fmt(field, "truncated before field"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fmt("magic", "truncated header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(fmt("magic", format!("expected FMCK, found {magic:?}")));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(fmt("version", format!("unsupported version {version}")));
    }
    let cfg_len = read_u32(r, "config_len")?;
    if cfg_len > MAX_CONFIG {
        return Err(fmt("config_len", format!("{cfg_len} bytes is implausible")));
    }
    let mut cfg_buf = vec![0u8; cfg_len as usize];
    r.read_exact(&mut cfg_buf)
        .map_err(|_| fmt("config", "truncated config block"))?;
    let header: Header =
        serde_json::from_slice(&cfg_buf).map_err(|e| fmt("config", e.to_string()))?;
    let cfg = header.model;
    cfg.validate()?;

    let count = read_u32(r, "n_tensors")?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(r, "name_len")?;
        if name_len > MAX_NAME {
            return Err(fmt("name_len", format!("{name_len} bytes is implausible")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| fmt("name", "truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| fmt("name", "not UTF-8"))?;
        let rows = read_u32(r, "rows")? as usize;
        let cols = read_u32(r, "cols")? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| *n <= (1usize << 31))
            .ok_or_else(|| {
                fmt(
                    "rows",
                    format!("tensor '{name}' dims {rows}x{cols} overflow"),
                )
            })?;
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|_| fmt("payload", format!("tensor '{name}' truncated")))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push(Matrix::from_shape_vec((rows, cols), data).expect("length checked"));
        names.push(name);
    }
    let params = Parameters::from_parts(names, tensors);
    params.check_against(&cfg)?;
    Ok(Checkpoint {
        config: cfg,
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &Parameters,
    meta: CheckpointMeta,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, cfg, params, meta)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
