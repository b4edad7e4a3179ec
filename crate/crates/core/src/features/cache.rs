//! On-disk feature cache, one file per recording.
//!
//! Layout: `b"LSFC"`, then `frames`, `dim` and `window count` as u64 LE,
//! then every window's matrix as row-major f64 LE. A JSON sidecar with the
//! same stem holds the extraction parameters, the source id and the window
//! start times; a cache whose parameters differ is ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FeatureError, FeatureExtractor, FeatureWindow, Result};
use crate::audio::AudioClip;

const MAGIC: &[u8; 4] = b"LSFC";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: FeatureConfig,
    source_id: String,
    starts_s: Vec<f64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_cache(path: &Path, config: &FeatureConfig, windows: &[FeatureWindow]) -> Result<()> {
    let (frames, dim) = windows.first().map_or((0, 0), |w| (w.frames, w.dim));
    let mut out = Vec::with_capacity(28 + windows.len() * frames * dim * 8);
    out.extend_from_slice(MAGIC);
    for v in [frames, dim, windows.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for w in windows {
        if (w.frames, w.dim) != (frames, dim) {
            return Err(FeatureError::Shape {
                len: w.data.len(),
                frames,
                dim,
            });
        }
        out.extend(w.data.iter().flat_map(|v| v.to_le_bytes()));
    }
    fs::write(path, out).map_err(io(path))?;
    let sidecar = Sidecar {
        config: config.clone(),
        source_id: windows.first().map(|w| w.source_id.clone()).unwrap_or_default(),
        starts_s: windows.iter().map(|w| w.start_s).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let side = sidecar_path(path);
    fs::write(&side, json).map_err(io(&side))
}

/// Returns `None` when either file is missing or the stored parameters
/// differ from `config`.
pub fn read_cache(path: &Path, config: &FeatureConfig) -> Result<Option<Vec<FeatureWindow>>> {
    let side = sidecar_path(path);
    let (Ok(json), Ok(bytes)) = (fs::read_to_string(&side), fs::read(path)) else {
        return Ok(None);
    };
    let corrupt = |reason: String| FeatureError::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let sidecar: Sidecar = serde_json::from_str(&json).map_err(|e| corrupt(format!("sidecar: {e}")))?;
    if &sidecar.config != config {
        return Ok(None);
    }
    if bytes.len() < 28 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().expect("8 bytes")) as usize;
    let (frames, dim, count) = (word(0), word(1), word(2));
    let expected = frames
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(count))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| corrupt("header sizes overflow".into()))?;
    if bytes.len() - 28 != expected || sidecar.starts_s.len() != count {
        return Err(corrupt(format!(
            "expected {count} windows of {frames} x {dim}, found {} payload bytes",
            bytes.len() - 28
        )));
    }
    let values: Vec<f64> = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if count == 0 {
        return Ok(Some(Vec::new()));
    }
    values
        .chunks_exact(frames * dim)
        .zip(&sidecar.starts_s)
        .map(|(chunk, &start)| FeatureWindow::with_dim(chunk.to_vec(), frames, dim, start, &sidecar.source_id))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Featurizes through `cache_dir/{source_id}.lsfc`, reusing a valid cache.
pub fn featurize_cached(
    extractor: &FeatureExtractor,
    clip: &AudioClip,
    source_id: &str,
    cache_dir: &Path,
) -> Result<Vec<FeatureWindow>> {
    let path = cache_dir.join(format!("{source_id}.lsfc"));
    if let Some(hit) = read_cache(&path, extractor.config())? {
        return Ok(hit);
    }
    let windows = extractor.featurize_clip(clip, source_id)?;
    fs::create_dir_all(cache_dir).map_err(io(cache_dir))?;
    write_cache(&path, extractor.config(), &windows)?;
    Ok(windows)
}
