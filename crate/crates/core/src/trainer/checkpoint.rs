//! Checkpoint persistence.
//!
//! Layout: 8-byte magic `JETC0001`, a u32-LE length-prefixed JSON header
//! (config snapshot, step, parameter manifest with name/shape/offset), then
//! four f64-LE blocks in manifest order (raw params, EMA params, optimizer
//! first moments, second moments), then the 56-byte generator state.
//! Save -> load -> save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::model::{JetConfig, JetParams};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::trainer::{OptimState, Result, TrainError};

const MAGIC: &[u8; 8] = b"JETC0001";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub classes: Vec<String>,
    /// Normalization scale of the training data, echoed into sampled
    /// dataset headers.
    pub scale: f64,
    pub step: u64,
    pub params: JetParams,
    pub ema: JetParams,
    pub optim: OptimState,
    pub rng_state: RngState,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f64 units within each block.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    run: RunConfig,
    classes: Vec<String>,
    scale: f64,
    step: u64,
    optim_step: u64,
    manifest: Vec<ParamEntry>,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, what: impl Into<String>) -> TrainError {
    TrainError::Malformed {
        path: path.display().to_string(),
        what: what.into(),
    }
}

fn push_block(buf: &mut Vec<u8>, tensors: &[&Tensor]) {
    for t in tensors {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let named = ck.params.named();
    let mut manifest = Vec::with_capacity(named.len());
    let mut offset = 0usize;
    for (name, t) in &named {
        manifest.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        run: ck.run.clone(),
        classes: ck.classes.clone(),
        scale: ck.scale,
        step: ck.step,
        optim_step: ck.optim.step,
        manifest,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| malformed(path, e.to_string()))?;

    let mut buf = Vec::with_capacity(12 + header_json.len() + offset * 8 * 4 + RngState::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    push_block(&mut buf, &named.iter().map(|(_, t)| *t).collect::<Vec<_>>());
    push_block(
        &mut buf,
        &ck.ema.named().iter().map(|(_, t)| *t).collect::<Vec<_>>(),
    );
    push_block(&mut buf, &ck.optim.m.iter().collect::<Vec<_>>());
    push_block(&mut buf, &ck.optim.v.iter().collect::<Vec<_>>());
    buf.extend_from_slice(&ck.rng_state.to_bytes());
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

fn read_block(
    path: &Path,
    bytes: &[u8],
    manifest: &[ParamEntry],
    total: usize,
    block_idx: usize,
) -> Result<Vec<Tensor>> {
    let base = block_idx * total * 8;
    let mut out = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let n: usize = entry.shape.iter().product();
        let lo = base + entry.offset * 8;
        let hi = lo + n * 8;
        if hi > bytes.len() {
            return Err(malformed(path, "truncated parameter block"));
        }
        let data: Vec<f64> = bytes[lo..hi]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(
            Tensor::new(entry.shape.clone(), data)
                .map_err(|e| malformed(path, format!("parameter {}: {e}", entry.name)))?,
        );
    }
    Ok(out)
}

fn fill_params(
    path: &Path,
    config: JetConfig,
    manifest: &[ParamEntry],
    tensors: Vec<Tensor>,
) -> Result<JetParams> {
    let mut params = JetParams::zeros(config)?;
    {
        let named = params.named_mut();
        if named.len() != manifest.len() {
            return Err(malformed(
                path,
                format!(
                    "manifest has {} parameters, config implies {}",
                    manifest.len(),
                    named.len()
                ),
            ));
        }
        for ((slot_name, slot), (entry, tensor)) in
            named.into_iter().zip(manifest.iter().zip(tensors))
        {
            if slot_name != entry.name || slot.shape() != entry.shape.as_slice() {
                return Err(malformed(
                    path,
                    format!(
                        "parameter `{}` {:?} does not match expected `{slot_name}` {:?}",
                        entry.name,
                        entry.shape,
                        slot.shape()
                    ),
                ));
            }
            *slot = tensor;
        }
    }
    Ok(params)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(malformed(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| malformed(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(malformed(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }

    let total: usize = header
        .manifest
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    let body = &bytes[12 + header_len..];
    let expected = total * 8 * 4 + RngState::BYTES;
    if body.len() != expected {
        return Err(malformed(
            path,
            format!("body is {} bytes, expected {expected}", body.len()),
        ));
    }

    let config = JetConfig::new(header.run.geometry, header.run.model, header.classes.len());
    let params = fill_params(
        path,
        config,
        &header.manifest,
        read_block(path, body, &header.manifest, total, 0)?,
    )?;
    let ema = fill_params(
        path,
        config,
        &header.manifest,
        read_block(path, body, &header.manifest, total, 1)?,
    )?;
    let m = read_block(path, body, &header.manifest, total, 2)?;
    let v = read_block(path, body, &header.manifest, total, 3)?;
    let rng_bytes: [u8; RngState::BYTES] = body[total * 8 * 4..].try_into().unwrap();

    Ok(Checkpoint {
        run: header.run,
        classes: header.classes,
        scale: header.scale,
        step: header.step,
        params,
        ema,
        optim: OptimState {
            m,
            v,
            step: header.optim_step,
        },
        rng_state: RngState::from_bytes(&rng_bytes),
    })
}
