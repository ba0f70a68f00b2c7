//! On-disk dataset layout: a JSON manifest plus one NDJSON record per window.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, LabelingStats, Normalizer, Window};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WINDOWS_FILE: &str = "windows.ndjson";

/// Dataset metadata stored next to the windows; readable on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub channel_names: Vec<String>,
    pub window_len: usize,
    pub window_count: usize,
    pub labeling: Option<LabelingStats>,
    pub normalizer: Option<Normalizer>,
}

/// Reads and version-checks a dataset manifest without loading windows.
pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            expected: DATASET_FORMAT_VERSION.into(),
        });
    }
    Ok(manifest)
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: DATASET_FORMAT_VERSION.to_string(),
        channel_names: ds.channel_names.clone(),
        window_len: ds.window_len,
        window_count: ds.len(),
        labeling: ds.labeling.clone(),
        normalizer: ds.normalizer.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let windows_path = dir.join(WINDOWS_FILE);
    let file = File::create(&windows_path).map_err(|e| Error::io(&windows_path, e))?;
    let mut out = BufWriter::new(file);
    for w in &ds.windows {
        serde_json::to_writer(&mut out, w).map_err(|e| Error::json(&windows_path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(&windows_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&windows_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;

    let windows_path = dir.join(WINDOWS_FILE);
    let file = File::open(&windows_path).map_err(|e| Error::io(&windows_path, e))?;
    let mut windows = Vec::with_capacity(manifest.window_count);
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&windows_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let w: Window = serde_json::from_str(&line).map_err(|e| Error::json(&windows_path, e))?;
        windows.push(w);
    }
    if windows.len() != manifest.window_count {
        return Err(Error::MalformedFile(format!(
            "{}: manifest declares {} windows, found {}",
            dir.display(),
            manifest.window_count,
            windows.len()
        )));
    }
    let ds = Dataset {
        channel_names: manifest.channel_names,
        window_len: manifest.window_len,
        windows,
        labeling: manifest.labeling,
        normalizer: manifest.normalizer,
    };
    ds.validate()?;
    Ok(ds)
}
