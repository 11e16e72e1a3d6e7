//! AVCK checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "AVCK"
//! version u16      currently 1
//! count   u32      number of tensor records
//! record: name_len u16, name UTF-8, rank u8, dims rank×u32,
//!         dtype u8 (0 = f32), payload numel×f32
//! ```
//!
//! Loading parses the whole file before touching the model, so a bad file
//! never leaves a model half-written.

use crate::error::Result;
use crate::format_err;
use avit_core::model::Model;
use avit_core::tensor::Tensor;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"AVCK";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes named tensors in the order given.
pub fn encode(entries: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(u32::try_from(entries.len())
        .map_err(|_| format_err!("checkpoint: too many tensors"))?)
    .to_le_bytes());
    for (name, tensor) in entries {
        if !seen.insert(name.as_str()) {
            return Err(format_err!("checkpoint: duplicate tensor name `{name}`"));
        }
        let name_bytes = name.as_bytes();
        let len = u16::try_from(name_bytes.len())
            .map_err(|_| format_err!("checkpoint: tensor name `{name}` too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        let rank = u8::try_from(shape.len())
            .map_err(|_| format_err!("checkpoint: `{name}` rank too large"))?;
        out.push(rank);
        for &d in shape {
            let d = u32::try_from(d)
                .map_err(|_| format_err!("checkpoint: `{name}` dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err!(
                "checkpoint truncated at byte {} while reading {what}",
                self.bytes.len()
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses checkpoint bytes into named tensors, preserving record order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(format_err!("checkpoint: bad magic, not an AVCK file"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err!(
            "checkpoint: unsupported version {version}, expected {VERSION}"
        ));
    }
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| format_err!("checkpoint: tensor name is not UTF-8"))?;
        if !seen.insert(name.clone()) {
            return Err(format_err!("checkpoint: duplicate tensor name `{name}`"));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(format_err!(
                "checkpoint: `{name}` has unsupported dtype tag {dtype}"
            ));
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 4, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| format_err!("checkpoint: `{name}`: {e}"))?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(format_err!(
            "checkpoint: {} trailing bytes after last record",
            bytes.len() - r.pos
        ));
    }
    Ok(entries)
}

/// Saves every parameter and BN buffer of `model`.
pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    let entries = model.tensor_entries();
    let owned: Vec<(String, &Tensor<f32>)> = entries.into_iter().collect();
    Ok(fs::write(path, encode(&owned)?)?)
}

/// Saves only the tensors whose name starts with `prefix` (e.g. `backbone.`
/// to export a donor trunk).
pub fn save_filtered(model: &Model<f32>, prefix: &str, path: &Path) -> Result<()> {
    let entries: Vec<(String, &Tensor<f32>)> = model
        .tensor_entries()
        .into_iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .collect();
    if entries.is_empty() {
        return Err(format_err!(
            "checkpoint: no tensors match prefix `{prefix}`"
        ));
    }
    Ok(fs::write(path, encode(&entries)?)?)
}

fn preview(names: &BTreeSet<&str>) -> String {
    let mut list: Vec<&str> = names.iter().copied().take(4).collect();
    if names.len() > 4 {
        list.push("…");
    }
    list.join(", ")
}

/// Applies parsed entries to `model`.
///
/// Strict mode requires the file and the model to carry exactly the same
/// tensor names. With `partial`, only the intersection is loaded; file-only
/// and model-only names are ignored. Shape mismatches are always errors, and
/// all checks run before the first write.
pub fn apply(
    entries: &[(String, Tensor<f32>)],
    model: &mut Model<f32>,
    partial: bool,
) -> Result<usize> {
    let model_entries = model.tensor_entries();
    let model_names: BTreeSet<&str> = model_entries.iter().map(|(n, _)| n.as_str()).collect();
    let file_names: BTreeSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();

    if !partial {
        let missing: BTreeSet<&str> = model_names.difference(&file_names).copied().collect();
        if !missing.is_empty() {
            return Err(format_err!(
                "checkpoint: {} model tensors missing from file ({}); use --partial to load a subset",
                missing.len(),
                preview(&missing)
            ));
        }
        let extra: BTreeSet<&str> = file_names.difference(&model_names).copied().collect();
        if !extra.is_empty() {
            return Err(format_err!(
                "checkpoint: {} file tensors unknown to the model ({}); use --partial to ignore them",
                extra.len(),
                preview(&extra)
            ));
        }
    }

    let mut to_apply: Vec<(String, Tensor<f32>)> = Vec::new();
    for (name, tensor) in entries {
        let Some((_, current)) = model_entries.iter().find(|(n, _)| n == name) else {
            continue; // partial mode: file-only tensor
        };
        if current.shape() != tensor.shape() {
            return Err(format_err!(
                "checkpoint: `{name}` has shape {:?} in file but {:?} in model",
                tensor.shape(),
                current.shape()
            ));
        }
        to_apply.push((name.clone(), tensor.clone()));
    }
    drop(model_entries);
    let applied = to_apply.len();
    model.restore_entries(&to_apply)?;
    Ok(applied)
}

/// Reads `path` and applies it to `model` (see [`apply`]).
pub fn load_into(path: &Path, model: &mut Model<f32>, partial: bool) -> Result<usize> {
    let entries = decode(&fs::read(path)?)?;
    apply(&entries, model, partial)
}
