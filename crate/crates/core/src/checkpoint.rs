//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "STWVCKPT"
//! 8 bytes   u64 header length N
//! N bytes   UTF-8 JSON header {format_version, config, tensors: [{name, shape, offset, len}]}
//! ...       f32 payload, tensors back to back in header order (offset/len in elements)
//! 32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Tensor names are the generator's canonical parameter names; names under
//! `aux.` carry auxiliary arrays such as a fitted sigma Gaussian.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, Param};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"STWVCKPT";
const DIGEST_LEN: usize = 32;
pub const AUX_PREFIX: &str = "aux.";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: GeneratorConfig,
    tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: Generator,
    pub aux: BTreeMap<String, Param>,
}

/// Serialises a generator plus auxiliary arrays (names without the `aux.`
/// prefix).
pub fn encode(gen: &Generator, aux: &BTreeMap<String, Param>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, p: &Param, payload: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name,
            shape: p.shape.clone(),
            offset,
            len: p.data.len(),
        });
        offset += p.data.len();
        for v in &p.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, p) in gen.named_params() {
        push(name, p, &mut payload);
    }
    for (name, p) in aux {
        push(format!("{AUX_PREFIX}{name}"), p, &mut payload);
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: gen.config().clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let integrity = |m: &str| Error::Integrity(m.to_string());
    if bytes.len() < 16 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(integrity("missing magic or file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(integrity("checksum mismatch (truncated or corrupted file)"));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| integrity("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: header.format_version,
        });
    }
    let payload = &body[header_end..];
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != total * 4 {
        return Err(integrity("payload size disagrees with header"));
    }

    let mut gen = Generator::new(header.config)?;
    let expected: BTreeSet<String> = gen.named_params().into_iter().map(|(n, _)| n).collect();
    let mut seen = BTreeSet::new();
    let mut aux = BTreeMap::new();
    for t in header.tensors {
        if t.shape.iter().product::<usize>() != t.len || (t.offset + t.len) * 4 > payload.len() {
            return Err(integrity(&format!(
                "tensor {} has inconsistent extent",
                t.name
            )));
        }
        let data = payload[t.offset * 4..(t.offset + t.len) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let param = Param {
            shape: t.shape,
            data,
        };
        if let Some(name) = t.name.strip_prefix(AUX_PREFIX) {
            aux.insert(name.to_string(), param);
            continue;
        }
        if !expected.contains(&t.name) {
            return Err(Error::UnknownParameter(t.name));
        }
        if !seen.insert(t.name.clone()) {
            return Err(integrity(&format!("parameter {} appears twice", t.name)));
        }
        gen.set_param(&t.name, param)?;
    }
    if let Some(missing) = expected.difference(&seen).next() {
        return Err(integrity(&format!("parameter {missing} missing")));
    }
    Ok(Checkpoint {
        generator: gen,
        aux,
    })
}

pub fn save_checkpoint(gen: &Generator, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with_aux(gen, &BTreeMap::new(), path)
}

pub fn save_checkpoint_with_aux(
    gen: &Generator,
    aux: &BTreeMap<String, Param>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(gen, aux)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Generator> {
    Ok(load_checkpoint_full(path)?.generator)
}

pub fn load_checkpoint_full(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
