//! File formats: the binary sample archive, JSON model parameters, and
//! atomic writes (temp + rename).
//!
//! Sample archive layout (little endian throughout):
//!
//! ```text
//! offset size  field
//! 0      8     magic "COVSAMP\0"
//! 8      4     u32 format version (currently 1)
//! 12     1     u8 dtype tag (1 = f64 little-endian)
//! 13     1     u8 rank
//! 14     8*r   u64 dims[rank]
//! ...    8*n   f64 data, row-major
//! ```
//!
//! Readers reject unknown magic, version or dtype.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::denoiser::MlpDenoiser;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"COVSAMP\0";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64_LE: u8 = 1;

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}

pub fn atomic_write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

/// Serializes one array into the sample-archive format.
pub fn array_to_bytes(array: &ArrayD<f64>) -> Vec<u8> {
    let shape = array.shape();
    let mut out = Vec::with_capacity(14 + 8 * shape.len() + 8 * array.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F64_LE);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let std_layout = array.as_standard_layout();
    for v in std_layout.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the sample-archive format back into an array.
pub fn array_from_bytes(bytes: &[u8]) -> Result<ArrayD<f64>> {
    if bytes.len() < 14 {
        return Err(Error::schema("sample file truncated before header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::schema("bad magic; not a sample archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::schema(format!(
            "unsupported sample format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let dtype = bytes[12];
    if dtype != DTYPE_F64_LE {
        return Err(Error::schema(format!("unsupported dtype tag {dtype}")));
    }
    let rank = bytes[13] as usize;
    let mut offset = 14;
    if bytes.len() < offset + 8 * rank {
        return Err(Error::schema("sample file truncated in dims"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        shape.push(d as usize);
        offset += 8;
    }
    let len: usize = shape.iter().product();
    if bytes.len() != offset + 8 * len {
        return Err(Error::schema(format!(
            "sample file has {} data bytes, expected {}",
            bytes.len() - offset,
            8 * len
        )));
    }
    let mut data = Vec::with_capacity(len);
    for i in 0..len {
        let start = offset + 8 * i;
        let v = f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::schema(format!("non-finite value at element {i}")));
        }
        data.push(v);
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| Error::schema(format!("shape/data mismatch: {e}")))
}

/// Writes a batch of same-shaped samples as one `[N, ...]` archive.
pub fn write_samples(path: &Path, samples: &[ArrayD<f64>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid_argument("no samples to write"));
    }
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(samples[0].shape());
    let mut data = Vec::with_capacity(samples.len() * samples[0].len());
    for s in samples {
        if s.shape() != samples[0].shape() {
            return Err(Error::invalid_argument("samples must share one shape"));
        }
        data.extend(s.as_standard_layout().iter().copied());
    }
    let stacked = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape/len agree");
    atomic_write(path, &array_to_bytes(&stacked))
}

/// Reads a batch archive back into individual samples.
pub fn read_samples(path: &Path) -> Result<Vec<ArrayD<f64>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let stacked = array_from_bytes(&bytes)?;
    if stacked.ndim() == 0 {
        return Err(Error::schema("sample archive has no batch axis"));
    }
    let n = stacked.shape()[0];
    let inner: Vec<usize> = stacked.shape()[1..].to_vec();
    let len: usize = inner.iter().product();
    let flat = stacked.as_slice().expect("standard layout");
    Ok((0..n)
        .map(|i| {
            ArrayD::from_shape_vec(IxDyn(&inner), flat[i * len..(i + 1) * len].to_vec())
                .expect("shape/len agree")
        })
        .collect())
}

/// JSON model file: a versioned, named map of parameter arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub kind: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub arrays: std::collections::BTreeMap<String, ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save_mlp(path: &Path, mlp: &MlpDenoiser) -> Result<()> {
    let mut arrays = std::collections::BTreeMap::new();
    for (name, shape, data) in mlp.params() {
        arrays.insert(name, ArrayEntry { shape, data });
    }
    let file = ModelFile {
        version: FORMAT_VERSION,
        kind: "mlp".to_string(),
        shape: mlp.shape().to_vec(),
        hidden: mlp.hidden().to_vec(),
        arrays,
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::schema(format!("model serialization failed: {e}")))?;
    atomic_write_text(path, &text)
}

pub fn load_mlp(path: &Path) -> Result<MlpDenoiser> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::schema(format!("bad model file: {e}")))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::schema(format!(
            "unsupported model file version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    if file.kind != "mlp" {
        return Err(Error::schema(format!("expected kind 'mlp', got '{}'", file.kind)));
    }
    let params: Vec<(String, Vec<usize>, Vec<f64>)> = file
        .arrays
        .into_iter()
        .map(|(name, e)| (name, e.shape, e.data))
        .collect();
    MlpDenoiser::from_params(&file.shape, &file.hidden, &params)
}
