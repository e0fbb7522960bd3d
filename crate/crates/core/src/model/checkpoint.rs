//! Checkpoint files.
//!
//! ```text
//! "ECHWCKPT"  u16 version  u32 entry count
//! per entry:
//!   u32 entry byte length (everything below)
//!   u16 name length + UTF-8 name
//!   u8 group tag (0 primary, 1 auxiliary)
//!   u8 rank, rank × u32 extents
//!   f32 payload, row-major
//! ```
//! Little-endian throughout. Architecture and vocabulary travel as `meta.*`
//! entries so a file is self-describing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{AuxConfig, ConvStage, ModelBundle, ModelError, SensorConfig};
use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::nn::{Group, NormKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECHWCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

const META_SENSOR: &str = "meta.sensor";
const META_VOCAB: &str = "meta.vocab";
const META_AUX: &str = "meta.aux";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("truncated checkpoint at byte offset {0}")]
    Truncated(usize),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: expected shape {expected:?}, file has {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0}: group tag does not match the architecture")]
    Group(String),
    #[error("unexpected entry {0}")]
    Unexpected(String),
    #[error("malformed metadata: {0}")]
    Meta(String),
}

struct Entry {
    name: String,
    group: u8,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn push_entry(
    out: &mut Vec<u8>,
    name: &str,
    group: Group,
    shape: &[usize],
    data: impl Iterator<Item = f32>,
) {
    let mut body = Vec::new();
    body.extend_from_slice(&(name.len() as u16).to_le_bytes());
    body.extend_from_slice(name.as_bytes());
    body.push(group.tag());
    body.push(shape.len() as u8);
    for &d in shape {
        body.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
}

fn sensor_meta(cfg: &SensorConfig) -> Vec<f32> {
    let mut v = vec![
        cfg.in_channels,
        cfg.num_classes,
        cfg.lstm_hidden,
        cfg.lstm_layers,
        cfg.conv_stages.len(),
    ];
    for s in &cfg.conv_stages {
        v.extend([s.out_channels, s.kernel, s.stride]);
    }
    v.into_iter().map(|x| x as f32).collect()
}

fn aux_meta(cfg: &AuxConfig) -> Vec<f32> {
    [
        cfg.dim,
        cfg.pool_heads,
        cfg.text_layers,
        cfg.text_heads,
        (cfg.attn_dropout * 1e6).round() as usize,
        usize::from(cfg.norm_kind == NormKind::Rms),
        usize::from(cfg.gated),
        cfg.num_registers,
        cfg.max_len,
        cfg.ffn_mult,
    ]
    .into_iter()
    .map(|x| x as f32)
    .collect()
}

/// Serialize the bundle; with `include_aux == false` only deployable
/// parameters are written.
pub fn write_checkpoint(bundle: &ModelBundle, include_aux: bool) -> Vec<u8> {
    let aux = bundle.aux.as_ref().filter(|_| include_aux);
    let mut body = Vec::new();
    let mut count = 0u32;
    let sm = sensor_meta(&bundle.sensor.cfg);
    push_entry(
        &mut body,
        META_SENSOR,
        Group::Primary,
        &[sm.len()],
        sm.into_iter(),
    );
    let vocab: Vec<f32> = bundle
        .vocab
        .chars()
        .iter()
        .map(|&c| c as u32 as f32)
        .collect();
    push_entry(
        &mut body,
        META_VOCAB,
        Group::Primary,
        &[vocab.len()],
        vocab.into_iter(),
    );
    count += 2;
    if let Some(a) = aux {
        let am = aux_meta(&a.cfg);
        push_entry(
            &mut body,
            META_AUX,
            Group::Auxiliary,
            &[am.len()],
            am.into_iter(),
        );
        count += 1;
    }
    for (_, p) in bundle.store.iter() {
        if p.group == Group::Auxiliary && aux.is_none() {
            continue;
        }
        push_entry(
            &mut body,
            &p.name,
            p.group,
            p.value.shape(),
            p.value.data().iter().map(|&v| v as f32),
        );
        count += 1;
    }
    let mut out = Vec::with_capacity(body.len() + 14);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(bundle, true))?;
    Ok(())
}

/// Write the recognizer alone; the alignment branch is dropped.
pub fn export_inference_model(bundle: &ModelBundle, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(bundle, false))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle, ModelError> {
    read_checkpoint(&fs::read(path).map_err(CheckpointError::from)?)
}

fn parse_entries(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        if bytes.len() - pos < n {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let body = take(len)?;
        let bad = || CheckpointError::Meta("entry header overruns its length".into());
        let name_len =
            u16::from_le_bytes(body.get(0..2).ok_or_else(bad)?.try_into().expect("2 bytes"))
                as usize;
        let name = std::str::from_utf8(body.get(2..2 + name_len).ok_or_else(bad)?)
            .map_err(|_| CheckpointError::Meta("entry name is not UTF-8".into()))?
            .to_string();
        let mut at = 2 + name_len;
        let group = *body.get(at).ok_or_else(bad)?;
        let rank = *body.get(at + 1).ok_or_else(bad)? as usize;
        at += 2;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let raw = body.get(at..at + 4).ok_or_else(bad)?;
            shape.push(u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize);
            at += 4;
        }
        let payload = &body[at..];
        let numel: usize = shape.iter().product();
        if payload.len() != numel * 4 {
            return Err(CheckpointError::Meta(format!(
                "entry {name}: {} payload bytes for shape {shape:?}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(Entry {
            name,
            group,
            shape,
            data,
        });
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Meta(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(entries)
}

fn as_usize(v: &[f32], what: &str) -> Result<Vec<usize>, CheckpointError> {
    v.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(CheckpointError::Meta(format!(
                    "{what}: non-integer field {x}"
                )))
            }
        })
        .collect()
}

fn parse_sensor(v: &[f32]) -> Result<SensorConfig, CheckpointError> {
    let v = as_usize(v, META_SENSOR)?;
    if v.len() < 5 || v.len() != 5 + 3 * v[4] {
        return Err(CheckpointError::Meta(format!(
            "{META_SENSOR} has {} fields",
            v.len()
        )));
    }
    Ok(SensorConfig {
        in_channels: v[0],
        num_classes: v[1],
        lstm_hidden: v[2],
        lstm_layers: v[3],
        conv_stages: v[5..]
            .chunks(3)
            .map(|c| ConvStage {
                out_channels: c[0],
                kernel: c[1],
                stride: c[2],
            })
            .collect(),
    })
}

fn parse_aux(v: &[f32]) -> Result<AuxConfig, CheckpointError> {
    let v = as_usize(v, META_AUX)?;
    if v.len() != 10 {
        return Err(CheckpointError::Meta(format!(
            "{META_AUX} has {} fields",
            v.len()
        )));
    }
    Ok(AuxConfig {
        dim: v[0],
        pool_heads: v[1],
        text_layers: v[2],
        text_heads: v[3],
        attn_dropout: v[4] as f64 / 1e6,
        norm_kind: if v[5] == 1 {
            NormKind::Rms
        } else {
            NormKind::Layer
        },
        gated: v[6] == 1,
        num_registers: v[7],
        max_len: v[8],
        ffn_mult: v[9],
    })
}

/// Rebuild a bundle from checkpoint bytes. Every parameter the described
/// architecture declares must be present with matching shape and group.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelBundle, ModelError> {
    let entries = parse_entries(bytes)?;
    let mut by_name: HashMap<&str, &Entry> = HashMap::new();
    for e in &entries {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(CheckpointError::Meta(format!("duplicate entry {}", e.name)).into());
        }
    }
    let meta = |name: &str| {
        by_name
            .get(name)
            .map(|e| e.data.as_slice())
            .ok_or_else(|| CheckpointError::MissingParam(name.to_string()))
    };
    let sensor_cfg = parse_sensor(meta(META_SENSOR)?)?;
    let chars = meta(META_VOCAB)?
        .iter()
        .map(|&c| {
            char::from_u32(c as u32)
                .ok_or_else(|| CheckpointError::Meta(format!("bad code point {c}")))
        })
        .collect::<Result<Vec<char>, _>>()?;
    let aux_cfg = match by_name.get(META_AUX) {
        Some(e) => Some(parse_aux(&e.data)?),
        None => None,
    };
    let mut bundle = ModelBundle::new(Vocabulary::from_chars(chars), sensor_cfg, aux_cfg, 0)?;
    let mut used = 2 + usize::from(bundle.aux.is_some());
    for (id, p) in bundle.store.clone().iter() {
        let e = by_name
            .get(p.name.as_str())
            .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
        if e.shape != p.value.shape() {
            return Err(CheckpointError::Shape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: e.shape.clone(),
            }
            .into());
        }
        if e.group != p.group.tag() {
            return Err(CheckpointError::Group(p.name.clone()).into());
        }
        *bundle.store.value_mut(id) =
            Tensor::new(&e.shape, e.data.iter().map(|&v| v as f64).collect())?;
        used += 1;
    }
    if used != entries.len() {
        let known: std::collections::HashSet<&str> =
            bundle.store.iter().map(|(_, p)| p.name.as_str()).collect();
        let extra = entries
            .iter()
            .find(|e| !e.name.starts_with("meta.") && !known.contains(e.name.as_str()))
            .map_or_else(|| "?".to_string(), |e| e.name.clone());
        return Err(CheckpointError::Unexpected(extra).into());
    }
    Ok(bundle)
}
