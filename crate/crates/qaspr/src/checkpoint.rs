//! Binary model checkpoints.
//!
//! Layout: the magic bytes `QASPR\x01`, a little-endian `u64` length prefix
//! followed by a UTF-8 JSON metadata block (dimension, path length, top-k,
//! relation count, the resolved run config, and the seed), then one record
//! per tensor until end of file: `u32` name length + name bytes, `u32` rank,
//! `u64` per dimension, then the row-major `f64` payload, all little-endian.
//! Loading rebuilds the model from the metadata and validates every tensor's
//! shape against it.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use qaspr_core::model::ModelParams;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 6] = b"QASPR\x01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a checkpoint (bad magic)")]
    BadMagic(String),
    #[error("{path}: corrupt metadata: {detail}")]
    BadMetadata { path: String, detail: String },
    #[error("{path}: {source}")]
    BadTensor {
        path: String,
        #[source]
        source: qaspr_core::model::ModelError,
    },
    #[error("{path}: truncated tensor record")]
    Truncated { path: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dim: usize,
    pub path_len: usize,
    pub top_k: usize,
    pub n_relations: usize,
    pub shared_transform: bool,
    pub separate_scorers: bool,
    pub seed: u64,
    pub config: RunConfig,
}

pub fn save(path: &Path, model: &ModelParams, cfg: &RunConfig) -> Result<(), CheckpointError> {
    let display = path.display().to_string();
    let meta = CheckpointMeta {
        dim: model.d(),
        path_len: cfg.path_len,
        top_k: cfg.top_k,
        n_relations: model.n_relations(),
        shared_transform: model.shared_transform(),
        separate_scorers: model.separate_scorers(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|e| CheckpointError::BadMetadata { path: display.clone(), detail: e.to_string() })?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    let store = model.store();
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = store.shape(id);
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &dim in shape {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &x in store.data(id) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)
        .map_err(|source| CheckpointError::Io { path: display.clone(), source })?;
    file.write_all(&buf).map_err(|source| CheckpointError::Io { path: display, source })?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, CheckpointMeta), CheckpointError> {
    let display = path.display().to_string();
    let bytes =
        fs::read(path).map_err(|source| CheckpointError::Io { path: display.clone(), source })?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic(display));
    }
    let mut cur = Cursor::new(&bytes[MAGIC.len()..]);
    let meta_len = read_u64(&mut cur, &display)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    cur.read_exact(&mut meta_bytes)
        .map_err(|_| CheckpointError::Truncated { path: display.clone() })?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CheckpointError::BadMetadata { path: display.clone(), detail: e.to_string() })?;

    let mut model = ModelParams::init(
        meta.dim,
        meta.n_relations,
        meta.shared_transform,
        meta.separate_scorers,
        meta.seed,
    );
    loop {
        let mut probe = [0u8; 4];
        match cur.read_exact(&mut probe) {
            Ok(()) => {}
            Err(_) => break, // end of file
        }
        let name_len = u32::from_le_bytes(probe) as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)
            .map_err(|_| CheckpointError::Truncated { path: display.clone() })?;
        let name = String::from_utf8(name)
            .map_err(|e| CheckpointError::BadMetadata { path: display.clone(), detail: e.to_string() })?;
        let rank = read_u32(&mut cur, &display)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut cur, &display)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut scratch = [0u8; 8];
        for _ in 0..len {
            cur.read_exact(&mut scratch)
                .map_err(|_| CheckpointError::Truncated { path: display.clone() })?;
            data.push(f64::from_le_bytes(scratch));
        }
        model
            .set_tensor(&name, &shape, data)
            .map_err(|source| CheckpointError::BadTensor { path: display.clone(), source })?;
    }
    Ok((model, meta))
}

fn read_u64(cur: &mut Cursor<&[u8]>, path: &str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(|_| CheckpointError::Truncated { path: path.into() })?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(cur: &mut Cursor<&[u8]>, path: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| CheckpointError::Truncated { path: path.into() })?;
    Ok(u32::from_le_bytes(b))
}
