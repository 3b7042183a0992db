//! On-disk weight directory.
//!
//! A weight directory holds `manifest.json` plus two blobs per tensor:
//!
//! * `<name>.codes`: INT4 codes, row-major, two per byte. Element `2k` sits in
//!   the low nibble of byte `k`, element `2k + 1` in the high nibble, both as
//!   4-bit two's complement. An odd trailing element leaves the high nibble 0.
//! * `<name>.scales`: FP16 scales, one per `(row, group)`, row-major, each
//!   stored as two little-endian bytes.
//!
//! The manifest records shape, group size, blob names and the SHA-256 of each
//! blob. Loading fails if any digest disagrees.

use std::fs;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::QuantizedMatrix;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "hbsim-int4-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub group_size: usize,
    pub codes_file: String,
    pub scales_file: String,
    pub codes_sha256: String,
    pub scales_sha256: String,
}

pub fn pack_int4(codes: &[i8]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0f;
            let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0f);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_int4(bytes: &[u8], count: usize) -> Vec<i8> {
    let nibble = |n: u8| ((n << 4) as i8) >> 4;
    bytes
        .iter()
        .flat_map(|&b| [nibble(b & 0x0f), nibble(b >> 4)])
        .take(count)
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.starts_with('.')
}

/// Writes `tensors` into `dir`, creating it if needed.
pub fn write_weight_dir(dir: &Path, tensors: &[(&str, &QuantizedMatrix)]) -> Result<WeightManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tensors.len());
    for &(name, m) in tensors {
        if !valid_name(name) {
            return Err(Error::WeightFile(format!("invalid tensor name `{name}`")));
        }
        let codes = pack_int4(m.codes());
        let scales: Vec<u8> = m.scales().iter().flat_map(|s| s.to_le_bytes()).collect();
        let codes_file = format!("{name}.codes");
        let scales_file = format!("{name}.scales");
        fs::write(dir.join(&codes_file), &codes)?;
        fs::write(dir.join(&scales_file), &scales)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            group_size: m.group_size(),
            codes_file,
            scales_file,
            codes_sha256: sha256_hex(&codes),
            scales_sha256: sha256_hex(&scales),
        });
    }
    let manifest = WeightManifest {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        tensors: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_checked(dir: &Path, file: &str, digest: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(file))?;
    let actual = sha256_hex(&bytes);
    if actual != digest {
        return Err(Error::WeightFile(format!(
            "hash mismatch for {file}: manifest {digest}, blob {actual}"
        )));
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<WeightManifest> {
    let manifest: WeightManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(Error::WeightFile(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads every tensor, verifying digests and invariants.
pub fn read_weight_dir(dir: &Path) -> Result<Vec<(String, QuantizedMatrix)>> {
    let manifest = read_manifest(dir)?;
    manifest
        .tensors
        .iter()
        .map(|t| {
            let [rows, cols] = t.shape;
            if t.group_size == 0 || cols % t.group_size != 0 {
                return Err(Error::WeightFile(format!("{}: bad group size", t.name)));
            }
            let groups = rows * (cols / t.group_size);
            let codes = read_checked(dir, &t.codes_file, &t.codes_sha256)?;
            let scales = read_checked(dir, &t.scales_file, &t.scales_sha256)?;
            if codes.len() != (rows * cols).div_ceil(2) || scales.len() != groups * 2 {
                return Err(Error::WeightFile(format!("{}: blob size mismatch", t.name)));
            }
            let scales = scales
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]))
                .collect();
            let m = QuantizedMatrix::from_parts(
                rows,
                cols,
                t.group_size,
                unpack_int4(&codes, rows * cols),
                scales,
            )?;
            Ok((t.name.clone(), m))
        })
        .collect()
}

/// Checks every digest without materializing the tensors.
pub fn verify_weight_dir(dir: &Path) -> Result<usize> {
    let manifest = read_manifest(dir)?;
    for t in &manifest.tensors {
        read_checked(dir, &t.codes_file, &t.codes_sha256)?;
        read_checked(dir, &t.scales_file, &t.scales_sha256)?;
    }
    Ok(manifest.tensors.len())
}
