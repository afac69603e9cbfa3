//! Checkpoint format.
//!
//! Layout: 8-byte magic `SRNNCKPT`, little-endian u32 header length, UTF-8
//! JSON header (format version, config, layer plan, metadata, tensor
//! directory), raw little-endian f32 tensor payloads in directory order, and
//! a trailing CRC32 of the payload region.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cqt::PreprocessConfig;
use crate::error::{Error, Result};
use crate::model::config::{LayerSpec, SResnnConfig};
use crate::model::sresnn::SResnn;
use crate::nn::{Module, Sgd};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SRNNCKPT";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Shape classes the model was trained on.
    pub label_ids: Vec<usize>,
    pub optimizer: Sgd,
    /// Front-end settings needed to classify new audio.
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    Buffer,
    Optim,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: SResnnConfig,
    layer_plan: Vec<LayerSpec>,
    metadata: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// CRC32 (IEEE, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn collect_tensors(model: &mut SResnn<f32>) -> Vec<(String, TensorKind, Tensor<f32>)> {
    let mut out = Vec::new();
    model.for_each_param(&mut |name, p| {
        out.push((name.to_string(), TensorKind::Param, p.value.clone()));
    });
    model.for_each_buffer(&mut |name, b| {
        out.push((name.to_string(), TensorKind::Buffer, b.clone()));
    });
    model.for_each_param(&mut |name, p| {
        out.push((
            format!("{name}.momentum"),
            TensorKind::Optim,
            p.momentum.clone(),
        ));
    });
    out
}

/// Serializes a model; the resulting bytes are a pure function of the model
/// state and metadata.
pub fn save(model: &mut SResnn<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let tensors = collect_tensors(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, kind, t) in &tensors {
        let offset = payload.len() as u64;
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            kind: *kind,
            shape: t.shape().to_vec(),
            offset,
            len: t.len() as u64,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        layer_plan: model.config().layer_plan(),
        metadata: meta.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::MalformedCheckpoint(format!("header encode: {e}")))?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    w.write_all(&payload).map_err(io_err)?;
    w.write_all(&crc32(&payload).to_le_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Loads a checkpoint, validating the magic, version, payload checksum and
/// every tensor shape against the embedded configuration.
pub fn load(path: &Path) -> Result<(SResnn<f32>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end + 4 {
        return Err(Error::MalformedCheckpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::MalformedCheckpoint(format!("header decode: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            got: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[header_end..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut model = SResnn::<f32>::build(&header.config, 0)?;
    let mut directory: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();

    let read_tensor = |entry: &TensorEntry, expected_shape: &[usize]| -> Result<Tensor<f32>> {
        if entry.shape != expected_shape {
            return Err(Error::TensorShapeMismatch {
                name: entry.name.clone(),
                got: entry.shape.clone(),
                expected: expected_shape.to_vec(),
            });
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 4;
        let slice = payload.get(start..end).ok_or_else(|| {
            Error::MalformedCheckpoint(format!("tensor `{}` payload out of range", entry.name))
        })?;
        let data: Vec<f32> = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(entry.shape.clone(), data)
    };

    let mut failure: Option<Error> = None;
    model.for_each_param(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        match directory.remove(name) {
            Some(entry) => match read_tensor(entry, p.value.shape()) {
                Ok(t) => p.value = t,
                Err(e) => failure = Some(e),
            },
            None => {
                failure = Some(Error::MalformedCheckpoint(format!(
                    "missing parameter tensor `{name}`"
                )))
            }
        }
    });
    model.for_each_buffer(&mut |name, b| {
        if failure.is_some() {
            return;
        }
        match directory.remove(name) {
            Some(entry) => match read_tensor(entry, b.shape()) {
                Ok(t) => *b = t,
                Err(e) => failure = Some(e),
            },
            None => {
                failure = Some(Error::MalformedCheckpoint(format!(
                    "missing buffer tensor `{name}`"
                )))
            }
        }
    });
    model.for_each_param(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        let mname = format!("{name}.momentum");
        match directory.remove(mname.as_str()) {
            Some(entry) => match read_tensor(entry, p.momentum.shape()) {
                Ok(t) => p.momentum = t,
                Err(e) => failure = Some(e),
            },
            None => {
                failure = Some(Error::MalformedCheckpoint(format!(
                    "missing optimizer tensor `{mname}`"
                )))
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if !directory.is_empty() {
        let extra: Vec<&str> = directory.keys().copied().collect();
        return Err(Error::MalformedCheckpoint(format!(
            "unexpected tensors in checkpoint: {extra:?}"
        )));
    }
    Ok((model, header.metadata))
}

/// Sum of element counts over the parameter tensors recorded in a checkpoint
/// file (excludes buffers and optimizer state).
pub fn param_elements_in_file(path: &Path) -> Result<usize> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(
        bytes
            .get(12..12 + header_len)
            .ok_or_else(|| Error::MalformedCheckpoint("truncated header".into()))?,
    )
    .map_err(|e| Error::MalformedCheckpoint(format!("header decode: {e}")))?;
    Ok(header
        .tensors
        .iter()
        .filter(|t| t.kind == TensorKind::Param)
        .map(|t| t.len as usize)
        .sum())
}
