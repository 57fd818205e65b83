//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` little-endian format version, `u32` manifest
//! length, a JSON manifest, then every tensor's payload as row-major
//! little-endian `f32` in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkConfig, PolicyParams};
use super::tape::Tensor;
use super::PolicyError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    network: NetworkConfig,
    tensors: Vec<ManifestEntry>,
}

pub fn encode_checkpoint(params: &PolicyParams) -> Vec<u8> {
    let manifest = Manifest {
        network: params.config.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| ManifestEntry {
                name: n.clone(),
                dims: t.shape.clone(),
                dtype: "f32".into(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(
    bytes: &'a [u8],
    pos: &mut usize,
    n: usize,
    what: &str,
) -> Result<&'a [u8], PolicyError> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            PolicyError::Format(format!(
                "truncated file: {what} needs {n} bytes at offset {}, file has {}",
                *pos,
                bytes.len()
            ))
        })?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, PolicyError> {
    let b = take(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes a checkpoint. With `expected` set, every tensor must match that
/// configuration's layout exactly.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&NetworkConfig>,
) -> Result<PolicyParams, PolicyError> {
    let mut pos = 0;
    if take(bytes, &mut pos, 8, "magic")? != CHECKPOINT_MAGIC {
        return Err(PolicyError::Format(
            "not a checkpoint file (bad magic bytes)".into(),
        ));
    }
    let version = read_u32(bytes, &mut pos, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Format(format!(
            "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = read_u32(bytes, &mut pos, "manifest length")? as usize;
    let manifest: Manifest = serde_json::from_slice(take(bytes, &mut pos, len, "manifest")?)
        .map_err(|e| PolicyError::Format(format!("bad manifest: {e}")))?;

    let config = expected.cloned().unwrap_or(manifest.network.clone());
    let layout = PolicyParams::layout(&config);
    if layout.len() != manifest.tensors.len() {
        return Err(PolicyError::Format(format!(
            "manifest lists {} tensors, configuration expects {}",
            manifest.tensors.len(),
            layout.len()
        )));
    }
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (entry, (name, shape)) in manifest.tensors.iter().zip(layout) {
        if entry.name != name {
            return Err(PolicyError::Format(format!(
                "expected tensor `{name}`, found `{}`",
                entry.name
            )));
        }
        if entry.dtype != "f32" {
            return Err(PolicyError::Format(format!(
                "tensor `{name}` has unsupported scalar type {}",
                entry.dtype
            )));
        }
        if entry.dims != shape {
            return Err(PolicyError::Dimension {
                name,
                found: entry.dims.clone(),
                expected: shape,
            });
        }
        let n: usize = shape.iter().product();
        let raw = take(bytes, &mut pos, 4 * n, &format!("tensor `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data));
    }
    if pos != bytes.len() {
        return Err(PolicyError::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - pos
        )));
    }
    let params = PolicyParams {
        config,
        names,
        tensors,
    };
    if !params.is_finite() {
        return Err(PolicyError::Format(
            "checkpoint contains non-finite values".into(),
        ));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
    expected: Option<&NetworkConfig>,
) -> Result<PolicyParams, PolicyError> {
    decode_checkpoint(&std::fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> PolicyParams {
        PolicyParams::init(&NetworkConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = encode_checkpoint(&params());
        let loaded = decode_checkpoint(&bytes, None).unwrap();
        assert_eq!(encode_checkpoint(&loaded), bytes);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&loaded, &a).unwrap();
        save_checkpoint(
            &load_checkpoint(&a, Some(&NetworkConfig::desk())).unwrap(),
            &b,
        )
        .unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_checkpoint(&params());
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            assert!(
                matches!(
                    decode_checkpoint(&bytes[..cut], None),
                    Err(PolicyError::Format(_))
                ),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode_checkpoint(&params());
        bytes[8] = 9;
        let err = decode_checkpoint(&bytes, None).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn cross_preset_load_names_the_tensor() {
        let bytes = encode_checkpoint(&params());
        let err = decode_checkpoint(&bytes, Some(&NetworkConfig::paper())).unwrap_err();
        match err {
            PolicyError::Dimension { name, .. } => assert_eq!(name, "human.conv0.weight"),
            other => panic!("unexpected {other}"),
        }
    }
}
