//! Shared computation behind the CLI and the HTTP service.
//!
//! Both front ends go through [`Engine`], so a report requested over HTTP
//! is byte-for-byte the file `discover` writes for the same parameters.

use std::collections::HashMap;
use std::fs;
use std::hash::Hash;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use concept_forge_core::distance::distance_row;
use concept_forge_core::pipeline::{Discovery, NeuronTree, Params, SweepPoint};
use concept_forge_core::report::{NeuronReport, SCHEMA_VERSION};
use concept_forge_core::store::ActivationStore;
use concept_forge_core::Matrix;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::storeio::{hex, LoadedStore};

pub const CACHE_ENV: &str = "CONCEPT_FORGE_CACHE";

/// Layers for which the reference threshold of 15 is meaningful.
pub fn default_d_max(layer: &str) -> Option<f64> {
    let known = layer == "Mixed_7b" || layer.starts_with("Mixed_7b:");
    known.then_some(concept_forge_core::pipeline::DEFAULT_D_MAX)
}

/// Cache directory: `$CONCEPT_FORGE_CACHE`, else the user cache directory.
pub fn default_cache_dir() -> PathBuf {
    if let Some(p) = std::env::var_os(CACHE_ENV).filter(|p| !p.is_empty()) {
        return p.into();
    }
    if let Some(p) = std::env::var_os("XDG_CACHE_HOME").filter(|p| !p.is_empty()) {
        return PathBuf::from(p).join("concept-forge");
    }
    if let Some(home) = std::env::var_os("HOME").filter(|p| !p.is_empty()) {
        return PathBuf::from(home).join(".cache").join("concept-forge");
    }
    std::env::temp_dir().join("concept-forge")
}

/// Memoizes values per key; concurrent callers for one key wait for the
/// first computation instead of repeating it. Entries never change once set.
struct Memo<K, V> {
    slots: Mutex<HashMap<K, Slot<V>>>,
}

type Slot<V> = Arc<OnceLock<Result<Arc<V>, Arc<ForgeError>>>>;

impl<K: Eq + Hash + Clone, V> Memo<K, V> {
    fn new() -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, key: &K, compute: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
        let slot = self
            .slots
            .lock()
            .expect("cache lock poisoned")
            .entry(key.clone())
            .or_default()
            .clone();
        slot.get_or_init(|| compute().map(Arc::new).map_err(Arc::new))
            .clone()
            .map_err(ForgeError::Shared)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct ReportKey {
    neuron: usize,
    top_n: usize,
    d_max: u64,
    tau: u64,
    min_cluster_size: usize,
    top_k: usize,
}

impl ReportKey {
    fn new(neuron: usize, p: &Params, top_k: usize) -> Self {
        Self {
            neuron,
            top_n: p.top_n,
            d_max: p.d_max.to_bits(),
            tau: p.tau.to_bits(),
            min_cluster_size: p.min_cluster_size,
            top_k,
        }
    }
}

/// One line of a polysemanticity index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronSummary {
    pub neuron: usize,
    /// `C`
    pub clusters: usize,
    /// `Ĉ`
    pub surviving: usize,
    pub max_height: f64,
    pub top_activation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Threads for distance matrices and batch runs; 0 picks a default.
    pub workers: usize,
    /// Where report bodies are persisted between runs; `None` disables it.
    pub cache_dir: Option<PathBuf>,
}

pub struct Engine {
    loaded: LoadedStore,
    // Batch jobs may block on a cache slot filled by another thread; the
    // distance kernel runs on its own pool so that wait can always finish.
    pool: rayon::ThreadPool,
    batch: rayon::ThreadPool,
    cache_dir: Option<PathBuf>,
    trees: Memo<(usize, usize), NeuronTree>,
    reports: Memo<ReportKey, Vec<u8>>,
}

impl Engine {
    pub fn new(loaded: LoadedStore, opts: EngineOptions) -> Result<Self> {
        let pool = || {
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| ForgeError::Input(format!("cannot start workers: {e}")))
        };
        Ok(Self {
            loaded,
            pool: pool()?,
            batch: pool()?,
            cache_dir: opts.cache_dir,
            trees: Memo::new(),
            reports: Memo::new(),
        })
    }

    pub fn store(&self) -> &ActivationStore {
        &self.loaded.store
    }

    pub fn loaded(&self) -> &LoadedStore {
        &self.loaded
    }

    pub fn check_neuron(&self, neuron: usize) -> Result<()> {
        let d = self.store().dim();
        if neuron >= d {
            return Err(ForgeError::Input(format!(
                "neuron {neuron} out of range, layer has {d}"
            )));
        }
        Ok(())
    }

    /// Validates parameters against the pipeline rules and the store size.
    pub fn check_params(&self, p: &Params) -> Result<()> {
        p.validate()?;
        let m = self.store().len();
        if p.top_n > m {
            return Err(ForgeError::Input(format!(
                "top_n = {} exceeds the {m} stored inputs",
                p.top_n
            )));
        }
        Ok(())
    }

    fn pairwise(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let rows: Vec<Vec<f64>> = self
            .pool
            .install(|| (0..n).into_par_iter().map(|i| distance_row(x, i)).collect());
        Matrix::from_vec(n, n, rows.concat()).expect("square")
    }

    /// Top-N selection and dendrogram for one neuron, computed once per
    /// `(neuron, top_n)`.
    pub fn tree(&self, neuron: usize, top_n: usize) -> Result<Arc<NeuronTree>> {
        self.check_neuron(neuron)?;
        self.trees.get(&(neuron, top_n), || {
            Ok(NeuronTree::build_with(self.store(), neuron, top_n, |x| {
                self.pairwise(x)
            })?)
        })
    }

    pub fn discover(&self, neuron: usize, p: &Params) -> Result<(Arc<NeuronTree>, Discovery)> {
        self.check_params(p)?;
        let tree = self.tree(neuron, p.top_n)?;
        let d = tree.discover(self.store(), p.d_max, p.tau, p.min_cluster_size)?;
        Ok((tree, d))
    }

    pub fn sweep(&self, neuron: usize, p: &Params, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
        self.check_params(p)?;
        let tree = self.tree(neuron, p.top_n)?;
        Ok(tree.sweep(self.store(), thresholds, p.tau, p.min_cluster_size)?)
    }

    pub fn summary(&self, neuron: usize, p: &Params) -> Result<NeuronSummary> {
        let (tree, d) = self.discover(neuron, p)?;
        Ok(NeuronSummary {
            neuron,
            clusters: d.cluster_count(),
            surviving: d.surviving_count(),
            max_height: tree.dendrogram.max_height().unwrap_or(0.0),
            top_activation: tree.selection.activations[0],
        })
    }

    /// Summaries for many neurons, evaluated in parallel.
    pub fn summaries(&self, neurons: &[usize], p: &Params) -> Result<Vec<NeuronSummary>> {
        self.for_each(neurons, |n| self.summary(n, p))
            .into_iter()
            .collect()
    }

    /// Runs `f` for each neuron in parallel, keeping input order. Neurons
    /// must not repeat.
    pub fn for_each<T: Send>(&self, neurons: &[usize], f: impl Fn(usize) -> T + Sync) -> Vec<T> {
        self.batch
            .install(|| neurons.par_iter().map(|&n| f(n)).collect())
    }

    pub fn build_report(&self, neuron: usize, p: &Params, top_k: usize) -> Result<NeuronReport> {
        let (tree, d) = self.discover(neuron, p)?;
        Ok(NeuronReport::build(self.store(), &tree, &d, top_k)?)
    }

    /// The serialized report: pretty JSON with a trailing newline.
    pub fn report(&self, neuron: usize, p: &Params, top_k: usize) -> Result<Arc<Vec<u8>>> {
        self.check_neuron(neuron)?;
        self.check_params(p)?;
        let key = ReportKey::new(neuron, p, top_k);
        self.reports.get(&key, || {
            let file = self.cache_file(&key);
            if let Some(bytes) = file.as_ref().and_then(|f| fs::read(f).ok()) {
                return Ok(bytes);
            }
            let body = render(&self.build_report(neuron, p, top_k)?);
            if let Some(f) = file {
                if let Err(e) = persist(&f, &body) {
                    eprintln!("warning: cannot write cache entry {}: {e}", f.display());
                }
            }
            Ok(body)
        })
    }

    fn cache_file(&self, key: &ReportKey) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION"));
        h.update(SCHEMA_VERSION.to_le_bytes());
        h.update(&self.loaded.fingerprint);
        for v in [
            key.neuron as u64,
            key.top_n as u64,
            key.d_max,
            key.tau,
            key.min_cluster_size as u64,
            key.top_k as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        Some(dir.join(format!("{}.json", hex(&h.finalize()))))
    }
}

pub fn render(report: &NeuronReport) -> Vec<u8> {
    let mut body = serde_json::to_vec_pretty(report).expect("reports serialize");
    body.push(b'\n');
    body
}

fn persist(path: &std::path::Path, body: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("cache file has a parent");
    fs::create_dir_all(dir)?;
    // write-then-rename so readers never see a partial entry
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, body)?;
    fs::rename(&tmp, path)
}
