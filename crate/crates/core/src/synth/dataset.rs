//! Dataset persistence.
//!
//! Layout: 8-byte magic `JETD0001`, a u32-LE length-prefixed UTF-8 JSON
//! header, then segments in order, each a u32-LE class id followed by
//! C*T little-endian IEEE-754 f32 values, channel-major. A sidecar JSON
//! manifest records the generating spec, seed, counts, and burst times.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::signal::{EegSegment, LabeledSegment};
use crate::synth::{CorpusSpec, Result, SynthError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"JETD0001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "T")]
    pub samples: usize,
    #[serde(rename = "fs")]
    pub sample_rate: f64,
    pub scale: f64,
    pub classes: Vec<String>,
    pub counts: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSpec>,
    /// Burst onset times in seconds, one list per stored segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub segments: Vec<LabeledSegment>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment indices of each class, in storage order.
    pub fn class_ids(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.class_id).collect()
    }
}

/// Conventional sidecar path: `<dataset>.manifest.json`.
pub fn manifest_path(dataset: &Path) -> std::path::PathBuf {
    let mut os = dataset.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, what: impl Into<String>) -> SynthError {
    SynthError::Malformed {
        path: path.display().to_string(),
        what: what.into(),
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset, manifest: Option<&Manifest>) -> Result<()> {
    let header_json =
        serde_json::to_vec(&dataset.header).map_err(|e| malformed(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(
        8 + 4
            + header_json.len()
            + dataset.segments.len()
                * (4 + dataset.header.channels * dataset.header.samples * 4),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for seg in &dataset.segments {
        buf.extend_from_slice(&(seg.class_id as u32).to_le_bytes());
        for &v in seg.segment.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    if let Some(m) = manifest {
        let mpath = manifest_path(path);
        let json = serde_json::to_vec_pretty(m).map_err(|e| malformed(&mpath, e.to_string()))?;
        fs::write(&mpath, json).map_err(|e| io_err(&mpath, e))?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(malformed(path, "truncated header"));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| malformed(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(malformed(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }

    let per_segment = 4 + header.channels * header.samples * 4;
    let total: usize = header.counts.iter().sum::<u64>() as usize;
    let payload = &bytes[12 + header_len..];
    if payload.len() != per_segment * total {
        return Err(malformed(
            path,
            format!(
                "payload is {} bytes, expected {} for {} segments",
                payload.len(),
                per_segment * total,
                total
            ),
        ));
    }

    let mut segments = Vec::with_capacity(total);
    for i in 0..total {
        let chunk = &payload[i * per_segment..(i + 1) * per_segment];
        let class_id = u32::from_le_bytes(chunk[..4].try_into().unwrap()) as usize;
        if class_id >= header.classes.len() {
            return Err(malformed(
                path,
                format!("segment {i} has class id {class_id} out of range"),
            ));
        }
        let data: Vec<f64> = chunk[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let segment = EegSegment::with_scale(
            header.channels,
            header.samples,
            header.sample_rate,
            header.scale,
            data,
        )?;
        segments.push(LabeledSegment { segment, class_id });
    }
    Ok(Dataset { header, segments })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mpath = manifest_path(path);
    let bytes = fs::read(&mpath).map_err(|e| io_err(&mpath, e))?;
    serde_json::from_slice(&bytes).map_err(|e| malformed(&mpath, e.to_string()))
}
