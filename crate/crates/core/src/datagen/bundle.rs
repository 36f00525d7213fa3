//! On-disk dataset bundle: a directory holding `manifest.json` (generator
//! config and seed) plus one `center_<id>.json` per center.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_multicenter, CenterDataset, DataError, GeneratorConfig};

pub const BUNDLE_MANIFEST: &str = "manifest.json";
const FORMAT: &str = "fedsurg-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config: GeneratorConfig,
    centers: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    center_id: String,
    file: String,
    train: usize,
    test: usize,
}

/// Generated centers together with the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub config: GeneratorConfig,
    pub centers: Vec<CenterDataset>,
}

impl DatasetBundle {
    pub fn generate(config: GeneratorConfig) -> Result<Self, DataError> {
        let centers = generate_multicenter(&config)?;
        Ok(Self { config, centers })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|source| DataError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| DataError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(bundle.centers.len());
    for center in &bundle.centers {
        let file = format!("center_{}.json", center.center_id);
        write_json(&dir.join(&file), center)?;
        entries.push(ManifestEntry {
            center_id: center.center_id.clone(),
            file,
            train: center.train.len(),
            test: center.test.len(),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed: bundle.config.seed,
        config: bundle.config.clone(),
        centers: entries,
    };
    write_json(&dir.join(BUNDLE_MANIFEST), &manifest)
}

/// Reads a bundle directory (or its manifest path) and checks it against
/// the manifest's recorded sizes.
pub fn load_bundle(path: &Path) -> Result<DatasetBundle, DataError> {
    let manifest_path = if path.is_dir() {
        path.join(BUNDLE_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = read_json(&manifest_path)?;
    let invalid = |reason: String| DataError::Table {
        path: manifest_path.display().to_string(),
        reason,
    };
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(invalid(format!(
            "unsupported bundle format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut centers = Vec::with_capacity(manifest.centers.len());
    for entry in &manifest.centers {
        let center: CenterDataset = read_json(&dir.join(&entry.file))?;
        if center.center_id != entry.center_id
            || center.train.len() != entry.train
            || center.test.len() != entry.test
        {
            return Err(invalid(format!("{} does not match the manifest", entry.file)));
        }
        centers.push(center);
    }
    Ok(DatasetBundle {
        config: manifest.config,
        centers,
    })
}
