//! Versioned checkpoint container: a JSON manifest plus named flat
//! little-endian f64 arrays. Round-trips are bit-exact.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdiff::Tensor;

use super::{ActorParams, GruNet, LogitActor, ParamSet};

const MAGIC: &[u8; 4] = b"LQCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Architecture dims and provenance for one saved agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub env: String,
    pub grid: usize,
    pub obs_dim: usize,
    pub actions: usize,
    pub actor_kind: String,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub config_hash: String,
    /// Set when training stopped on a budget rather than completing.
    pub partial: bool,
    pub seed: u64,
    pub iteration: u64,
}

/// The persisted slice of an agent: policy plus critic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub actor: ActorParams,
    pub critic: GruNet,
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

pub fn save_agent(path: &Path, meta: &CheckpointMeta, snap: &AgentSnapshot) -> Result<(), CheckpointError> {
    let mut arrays: Vec<(String, &Tensor)> = Vec::new();
    for (name, t) in snap.actor.fields() {
        arrays.push((format!("actor.{name}"), t));
    }
    for (name, t) in snap.critic.fields() {
        arrays.push((format!("critic.{name}"), t));
    }

    let manifest = serde_json::to_vec(meta)?;
    let mut f = File::create(path).map_err(io_err(path))?;
    let w = &mut f;
    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(manifest.len() as u32).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&manifest).map_err(io_err(path))?;
    w.write_all(&(arrays.len() as u32).to_le_bytes()).map_err(io_err(path))?;
    for (name, t) in arrays {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(nb).map_err(io_err(path))?;
        w.write_all(&[t.rank() as u8]).map_err(io_err(path))?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err(path))?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<(CheckpointMeta, AgentSnapshot), CheckpointError> {
    let mut buf = Vec::new();
    File::open(path).map_err(io_err(path))?.read_to_end(&mut buf).map_err(io_err(path))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > buf.len() {
            return Err(CheckpointError::Format("truncated file".into()));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, mlen)?)?;

    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut arrays: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|_| CheckpointError::Format("array name not UTF-8".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((name, Tensor::from_shape_vec(shape, data)));
    }

    #[allow(unused_mut)]
    let mut actor = match meta.actor_kind.as_str() {
        "logit" => ActorParams::Logit(LogitActor::new(meta.obs_dim)),
        "gru" => ActorParams::Gru(GruNet::zeros(meta.obs_dim, meta.actor_hidden, meta.actions)),
        other => return Err(CheckpointError::Format(format!("unknown actor kind {other}"))),
    };
    let mut critic = GruNet::zeros(meta.obs_dim, meta.critic_hidden, meta.actions);

    let fill = |prefix: &str, target: &mut dyn ParamSet| -> Result<(), CheckpointError> {
        for (name, t) in target.fields_mut() {
            let full = format!("{prefix}.{name}");
            let (_, stored) = arrays
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| CheckpointError::Format(format!("missing array {full}")))?;
            if stored.shape() != t.shape() {
                return Err(CheckpointError::Format(format!(
                    "array {full}: stored shape {:?} does not match architecture {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            *t = stored.clone();
        }
        Ok(())
    };
    fill("actor", &mut actor)?;
    fill("critic", &mut critic)?;

    Ok((meta, AgentSnapshot { actor, critic }))
}
