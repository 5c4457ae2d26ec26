//! Named-tensor container: a tag line, the manifest length, a UTF-8 JSON
//! manifest, then the raw little-endian arrays at the listed offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CKPT_TAG: &str = "oat-ckpt-v1";
pub const PE_TAG: &str = "oat-pe-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Container<T> {
    pub tag: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Container<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_container<T: Scalar>(
    tag: &str,
    meta: &serde_json::Value,
    tensors: &[(&str, &Tensor<T>)],
) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = serde_json::to_vec_pretty(&Manifest {
        format: tag.to_string(),
        meta: meta.clone(),
        tensors: entries,
    })?;
    let mut out = format!("{tag}\n{}\n", manifest.len()).into_bytes();
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn write_container<T: Scalar>(
    path: &Path,
    tag: &str,
    meta: &serde_json::Value,
    tensors: &[(&str, &Tensor<T>)],
) -> Result<()> {
    let bytes = encode_container(tag, meta, tensors)?;
    write_atomic(path, &bytes)
}

fn take_line<'a>(bytes: &'a [u8], at: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*at..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    *at += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|e| Error::Format(e.to_string()))
}

fn read_values<T: Scalar>(raw: &[u8], dtype: &str) -> Result<Vec<T>> {
    match dtype {
        "f32" => Ok(raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect()),
        "f64" => Ok(raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect()),
        other => Err(Error::Format(format!("unsupported dtype `{other}`"))),
    }
}

pub fn decode_container<T: Scalar>(bytes: &[u8], expected_tag: &str) -> Result<Container<T>> {
    let mut at = 0;
    let tag = take_line(bytes, &mut at)?.to_string();
    if tag != expected_tag {
        return Err(Error::Format(format!("expected tag `{expected_tag}`, found `{tag}`")));
    }
    let len: usize = take_line(bytes, &mut at)?
        .trim()
        .parse()
        .map_err(|_| Error::Format("bad manifest length".into()))?;
    let manifest_end = at
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[at..manifest_end])?;
    if manifest.format != tag {
        return Err(Error::Format("manifest tag disagrees with header".into()));
    }
    let data = &bytes[manifest_end..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Format(format!("unsupported dtype `{other}`"))),
        };
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + numel * width;
        if end > data.len() {
            return Err(Error::Format(format!("tensor `{}` runs past end of file", e.name)));
        }
        let values = read_values(&data[start..end], &e.dtype)?;
        tensors.push((e.name, Tensor::new(e.shape, values)?));
    }
    Ok(Container {
        tag,
        meta: manifest.meta,
        tensors,
    })
}

pub fn read_container<T: Scalar>(path: &Path, expected_tag: &str) -> Result<Container<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, expected_tag)
}
