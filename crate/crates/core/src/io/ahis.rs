//! `AHIS` feature cache with a `.meta` sidecar holding the config hash.
//!
//! Layout (little-endian): magic `AHIS`, version u32, S, b, H, W (u32), S x b
//! f32 rows, then H x W u32 superpixel ids.

use std::path::{Path, PathBuf};

use super::binary::{read_f32s, read_u32, write_f32s};
use crate::error::{Error, Result};
use crate::histogram::AngularHistogramFeature;

pub const AHIS_MAGIC: &[u8; 4] = b"AHIS";
pub const AHIS_VERSION: u32 = 1;

pub fn encode_ahis(feature: &AngularHistogramFeature) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(AHIS_MAGIC);
    for v in [
        AHIS_VERSION,
        feature.num_superpixels() as u32,
        feature.bins as u32,
        feature.height as u32,
        feature.width as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_f32s(&mut buf, &feature.per_superpixel);
    for id in &feature.ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    buf
}

/// The coarse/fine split is not stored; callers pass it from their config.
pub fn decode_ahis(bytes: &[u8], coarse_bins: usize) -> std::result::Result<AngularHistogramFeature, String> {
    let rest = bytes.strip_prefix(AHIS_MAGIC).ok_or("missing AHIS magic")?;
    let mut r = rest;
    let version = read_u32(&mut r)?;
    if version != AHIS_VERSION {
        return Err(format!("unsupported AHIS version {version}"));
    }
    let [s, b, h, w] = [0; 4].map(|_| read_u32(&mut r).map(|v| v as usize));
    let (s, b, h, w) = (s?, b?, h?, w?);
    let rows = read_f32s(&mut r, s.checked_mul(b).ok_or("S x b overflows")?)?;
    let n = h.checked_mul(w).ok_or("H x W overflows")?;
    let ids = (0..n)
        .map(|_| read_u32(&mut r))
        .collect::<std::result::Result<Vec<u32>, String>>()?;
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    AngularHistogramFeature::from_rows(h, w, coarse_bins, b, rows, ids).map_err(|e| e.to_string())
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_ahis(path: &Path, feature: &AngularHistogramFeature, config_hash: &str) -> Result<()> {
    std::fs::write(path, encode_ahis(feature)).map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    std::fs::write(&meta, format!("config_hash = \"{config_hash}\"\n")).map_err(|e| Error::io(&meta, e))
}

pub fn read_config_hash(path: &Path) -> Result<String> {
    let meta = meta_path(path);
    let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Meta {
        config_hash: String,
    }
    toml::from_str::<Meta>(&text)
        .map(|m| m.config_hash)
        .map_err(|e| Error::format(&meta, e.message().to_owned()))
}

/// Reads a cache, refusing it when its sidecar hash differs from `expected_hash`.
pub fn read_ahis(path: &Path, coarse_bins: usize, expected_hash: &str) -> Result<AngularHistogramFeature> {
    let found = read_config_hash(path)?;
    if found != expected_hash {
        return Err(Error::format(
            path,
            format!("feature cache was built with config {found}, current config is {expected_hash}; rerun `features`"),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ahis(&bytes, coarse_bins).map_err(|m| Error::format(path, m))
}
