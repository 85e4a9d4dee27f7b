//! On-disk store layout: `activations.npy` next to `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use concept_forge_core::store::{ActivationStore, Manifest};
use concept_forge_core::synth::{SyntheticData, SyntheticSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::npy;

pub const ACTIVATIONS: &str = "activations.npy";
pub const MANIFEST: &str = "manifest.json";
pub const TRUTH: &str = "truth.json";

/// A store together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedStore {
    pub store: ActivationStore,
    pub dir: PathBuf,
    /// SHA-256 over the raw activation and manifest bytes.
    pub fingerprint: String,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ForgeError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    serde_json::from_slice(&read(path)?).map_err(|e| ForgeError::Config {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn load_store(dir: &Path) -> Result<LoadedStore> {
    if !dir.is_dir() {
        return Err(ForgeError::Input(format!(
            "store directory {} does not exist",
            dir.display()
        )));
    }
    let npy_path = dir.join(ACTIVATIONS);
    let manifest_path = dir.join(MANIFEST);
    // check the manifest first so a missing one is reported by name
    let manifest_bytes = read(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| ForgeError::Config {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    let npy_bytes = read(&npy_path)?;
    let tensor = npy::decode(&npy_bytes)?;
    let store = ActivationStore::build(tensor, manifest)?;

    let mut h = Sha256::new();
    h.update((npy_bytes.len() as u64).to_le_bytes());
    h.update(&npy_bytes);
    h.update(&manifest_bytes);
    Ok(LoadedStore {
        store,
        dir: dir.into(),
        fingerprint: hex(&h.finalize()),
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `store` as a pre-pooled `<f8` matrix plus manifest.
pub fn save_store(dir: &Path, store: &ActivationStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
    let m = store.data();
    let npy_path = dir.join(ACTIVATIONS);
    fs::write(&npy_path, npy::encode(&[m.rows(), m.cols()], m.as_slice()))
        .map_err(|e| ForgeError::io(&npy_path, e))?;
    write_json(&dir.join(MANIFEST), &store.manifest())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value).expect("serializable");
    body.push(b'\n');
    fs::write(path, body).map_err(|e| ForgeError::io(path, e))
}

pub fn read_synthspec(path: &Path) -> Result<SyntheticSpec> {
    serde_json::from_slice(&read(path)?).map_err(|e| ForgeError::Config {
        path: path.into(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct Truth<'a> {
    directions: &'a [Vec<f64>],
    labels: &'a [Option<usize>],
}

/// Writes a generated store and its ground truth (`truth.json`).
pub fn save_synthetic(dir: &Path, data: &SyntheticData) -> Result<()> {
    save_store(dir, &data.store)?;
    write_json(
        &dir.join(TRUTH),
        &Truth {
            directions: &data.directions,
            labels: &data.labels,
        },
    )
}
