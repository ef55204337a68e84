//! Model checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"MGSEGCKP"
//! 8       4     format version (u32, currently 1)
//! 12      4     header length L in bytes (u32)
//! 16      L     UTF-8 JSON header
//! 16+L    ...   parameter data
//! ```
//!
//! The header is `{"config": NetworkConfig, "dtype": "f32" | "f64",
//! "params": [{"name", "shape": [n, c, h, w]}, ...], "meta": any}`. Parameter
//! data follows in header order, each tensor row-major in `dtype` width.
//! Values are stored at the precision of the saving network, so a save/load
//! round trip at the same precision is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::config::NetworkConfig;
use crate::network::model::Network;
use crate::network::params::ModelParams;
use crate::tensor::{Real, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGSEGCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn of<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    dtype: Dtype,
    params: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A loaded checkpoint.
pub struct Checkpoint<T = f32> {
    pub network: Network<T>,
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint<T: Real>(network: &Network<T>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let dtype = Dtype::of::<T>();
    let params = network.params.params();
    let header = Header {
        config: network.config.clone(),
        dtype,
        params: params.iter().map(|p| Entry { name: p.name.clone(), shape: p.tensor.shape().dims() }).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + network.params.count() * dtype.width());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &params {
        for &v in p.tensor.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], origin: &Path) -> Result<Checkpoint<T>> {
    let bad = |detail: &str| Error::format(origin, detail.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = word(12) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;

    let mut params = ModelParams::<T>::zeros(&header.config)?;
    let mut slots = params.params_mut();
    if slots.len() != header.params.len() {
        return Err(bad("parameter count does not match the configuration"));
    }
    let width = header.dtype.width();
    let mut at = 16 + len;
    for (slot, entry) in slots.iter_mut().zip(&header.params) {
        let shape = Shape::new(entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
        if slot.name != entry.name || slot.tensor.shape() != shape {
            return Err(bad(&format!("unexpected parameter {} {shape}", entry.name)));
        }
        let end = at + shape.len() * width;
        let raw = bytes.get(at..end).ok_or_else(|| bad("truncated parameter data"))?;
        let values = raw
            .chunks_exact(width)
            .map(|c| match header.dtype {
                Dtype::F32 => f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))),
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .map(T::of)
            .collect();
        *slot.tensor = Tensor::from_vec(shape, values)?;
        at = end;
    }
    drop(slots);
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok(Checkpoint { network: Network::from_parts(header.config, params)?, meta: header.meta })
}

pub fn save_checkpoint<T: Real>(path: &Path, network: &Network<T>, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(network, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::config::FusionMode;

    fn small() -> NetworkConfig {
        NetworkConfig::new(vec![4, 4, 8], crate::attention::MotionGuidanceConfig::new(3, 2, 2), (16, 16))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for config in [small(), small().with_fusion(FusionMode::UnetBaseline)] {
            let net = Network::<f32>::new(config, 5).unwrap();
            let path = dir.path().join("m.ckpt");
            let meta = serde_json::json!({"epoch": 3});
            save_checkpoint(&path, &net, &meta).unwrap();
            let back = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(back.network, net);
            assert_eq!(back.meta, meta);
        }
        let net = Network::<f64>::new(small(), 6).unwrap();
        let bytes = encode_checkpoint(&net, &serde_json::Value::Null).unwrap();
        assert_eq!(decode_checkpoint::<f64>(&bytes, Path::new("mem")).unwrap().network, net);
    }

    #[test]
    fn rejects_corruption() {
        let net = Network::<f32>::new(small(), 7).unwrap();
        let bytes = encode_checkpoint(&net, &serde_json::Value::Null).unwrap();
        let p = Path::new("mem");
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint::<f32>(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint::<f32>(&magic, p).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(decode_checkpoint::<f32>(&version, p).is_err());
    }
}
