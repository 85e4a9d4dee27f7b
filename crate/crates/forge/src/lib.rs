//! File formats, caching, CLI and HTTP front ends for concept discovery.
//!
//! A store directory holds `activations.npy` (NPY v1.0, `(M, d)` or
//! `(M, d, H, W)`) and `manifest.json`. Reports go to
//! `<out>/neuron_NNNN.json`.

pub mod cli;
pub mod engine;
pub mod error;
pub mod npy;
pub mod server;
pub mod storeio;

use std::path::{Path, PathBuf};

pub use error::{ForgeError, Result};

/// Where `discover` writes the report for `neuron`.
pub fn report_path(dir: &Path, neuron: usize) -> PathBuf {
    dir.join(format!("neuron_{neuron:04}.json"))
}
