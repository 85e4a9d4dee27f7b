//! Command-line front end. Progress goes to stderr; stdout carries only
//! machine-readable output (JSON lines or CSV).

use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use concept_forge_core::pipeline::{Params, DEFAULT_MIN_CLUSTER_SIZE, DEFAULT_TAU, DEFAULT_TOP_N};
use concept_forge_core::report::{DEFAULT_TOP_K, SCHEMA_VERSION};
use concept_forge_core::store::Dtype;
use concept_forge_core::synth::generate;
use serde_json::json;

use crate::engine::{default_cache_dir, default_d_max, Engine, EngineOptions};
use crate::error::{ForgeError, Result};
use crate::server::{AppState, Defaults};
use crate::storeio::{load_store, read_synthspec, save_store, save_synthetic, write_json};
use crate::{npy, report_path, storeio};

#[derive(Debug, Parser)]
#[command(
    name = "concept-forge",
    version,
    about = "Find concept vectors behind polysemantic neurons"
)]
pub struct Cli {
    /// Worker threads for distance matrices and batch runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Do not read or write the report cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a store, print its summary, optionally write it pooled.
    Ingest {
        #[arg(long)]
        store: PathBuf,
        /// Write the pooled store here as float64.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic store from a synthspec.json.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one report per neuron.
    Discover {
        #[command(flatten)]
        job: Job,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Cluster counts over a list of thresholds, as CSV.
    Sweep {
        #[command(flatten)]
        job: Job,
        /// Comma-separated ascending thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polysemanticity index over many neurons, as CSV.
    Audit {
        #[command(flatten)]
        job: Job,
        /// Also write the index as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        job: Job,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Reports written by `discover`, served by /api/report.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Job {
    #[arg(long)]
    pub store: PathBuf,
    /// `all`, or a comma-separated list of indices and `a-b` ranges.
    #[arg(long, default_value = "all")]
    pub neuron: String,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub topn: usize,
    /// Required unless the layer has a known default.
    #[arg(long)]
    pub dmax: Option<f64>,
    /// Outlier cutoff in standard deviations; `inf` keeps every member.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_CLUSTER_SIZE)]
    pub min_cluster_size: usize,
}

/// Parses `all`, `7`, `0,3,9` or `0-15` into sorted unique indices below `d`.
pub fn parse_neurons(spec: &str, d: usize) -> Result<Vec<usize>> {
    if spec.trim() == "all" {
        return Ok((0..d).collect());
    }
    let bad = |part: &str| ForgeError::Input(format!("--neuron: cannot parse {part:?}"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| bad(part))?,
                b.trim().parse().map_err(|_| bad(part))?,
            ),
            None => {
                let n: usize = part.parse().map_err(|_| bad(part))?;
                (n, n)
            }
        };
        if lo > hi {
            return Err(bad(part));
        }
        if hi >= d {
            return Err(ForgeError::Input(format!(
                "--neuron: {hi} out of range, layer has {d}"
            )));
        }
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

struct Prepared {
    engine: Engine,
    neurons: Vec<usize>,
    params: Option<Params>,
}

fn prepare(cli_workers: usize, no_cache: bool, job: &Job) -> Result<Prepared> {
    let loaded = load_store(&job.store)?;
    eprintln!(
        "loaded {}: {} inputs x {} neurons, layer {:?}",
        job.store.display(),
        loaded.store.len(),
        loaded.store.dim(),
        loaded.store.layer_name()
    );
    let neurons = parse_neurons(&job.neuron, loaded.store.dim())?;
    let params = job
        .dmax
        .or_else(|| default_d_max(loaded.store.layer_name()))
        .map(|d_max| Params {
            top_n: job.topn,
            d_max,
            tau: job.tau,
            min_cluster_size: job.min_cluster_size,
        });
    let engine = Engine::new(
        loaded,
        EngineOptions {
            workers: cli_workers,
            cache_dir: (!no_cache).then(default_cache_dir),
        },
    )?;
    if let Some(p) = &params {
        engine.check_params(p)?;
    }
    Ok(Prepared {
        engine,
        neurons,
        params,
    })
}

fn require_params(p: &Prepared) -> Result<Params> {
    p.params.ok_or_else(|| {
        ForgeError::Input(format!(
            "--dmax is required: no default threshold for layer {:?}",
            p.engine.store().layer_name()
        ))
    })
}

fn stdout_line(line: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| ForgeError::io("<stdout>", e))
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Ingest { store, out } => ingest(&store, out.as_deref()),
        Command::Synth { spec, out } => {
            let spec = read_synthspec(&spec)?;
            let data = generate(&spec)?;
            save_synthetic(&out, &data)?;
            eprintln!("wrote {} rows to {}", data.store.len(), out.display());
            stdout_line(
                &json!({
                    "store": out,
                    "images": data.store.len(),
                    "neurons": data.store.dim(),
                    "concepts": data.directions.len(),
                })
                .to_string(),
            )
        }
        Command::Discover { job, top_k, out } => {
            let p = prepare(workers, cli.no_cache, &job)?;
            let params = require_params(&p)?;
            if top_k > p.engine.store().len() {
                return Err(ForgeError::Input(format!(
                    "--top-k {top_k} exceeds the stored inputs"
                )));
            }
            fs::create_dir_all(&out).map_err(|e| ForgeError::io(&out, e))?;
            let results = p.engine.for_each(&p.neurons, |n| -> Result<_> {
                let body = p.engine.report(n, &params, top_k)?;
                let path = report_path(&out, n);
                fs::write(&path, body.as_slice()).map_err(|e| ForgeError::io(&path, e))?;
                let s = p.engine.summary(n, &params)?;
                Ok((path, s))
            });
            for r in results {
                let (path, s) = r?;
                eprintln!(
                    "neuron {}: C={} surviving={} -> {}",
                    s.neuron,
                    s.clusters,
                    s.surviving,
                    path.display()
                );
                stdout_line(
                    &json!({
                        "neuron": s.neuron,
                        "clusters": s.clusters,
                        "surviving": s.surviving,
                        "report": path,
                    })
                    .to_string(),
                )?;
            }
            Ok(())
        }
        Command::Sweep {
            job,
            thresholds,
            out,
        } => {
            let mut p = prepare(workers, cli.no_cache, &job)?;
            // the threshold list replaces d_max; any positive value validates
            let params = Params {
                d_max: thresholds.first().copied().unwrap_or(1.0),
                ..p.params.take().unwrap_or(Params {
                    top_n: job.topn,
                    d_max: 1.0,
                    tau: job.tau,
                    min_cluster_size: job.min_cluster_size,
                })
            };
            let rows = p
                .engine
                .for_each(&p.neurons, |n| p.engine.sweep(n, &params, &thresholds));
            let mut csv = String::from("neuron,d_max,C,C_hat\n");
            for (n, r) in p.neurons.iter().zip(rows) {
                for pt in r? {
                    csv.push_str(&format!(
                        "{n},{},{},{}\n",
                        pt.d_max, pt.clusters, pt.surviving
                    ));
                }
            }
            emit(out.as_deref(), &csv)
        }
        Command::Audit { job, out } => {
            let p = prepare(workers, cli.no_cache, &job)?;
            let params = require_params(&p)?;
            let summary = p.engine.summaries(&p.neurons, &params)?;
            let polysemantic = summary.iter().filter(|s| s.surviving >= 2).count();
            eprintln!(
                "{polysemantic} of {} neurons yield two or more concepts",
                summary.len()
            );
            if let Some(path) = out {
                write_json(
                    &path,
                    &json!({
                        "schema": SCHEMA_VERSION,
                        "layer": p.engine.store().layer_name(),
                        "params": {
                            "top_n": params.top_n,
                            "d_max": params.d_max,
                            "tau": params.tau.is_finite().then_some(params.tau),
                            "min_cluster_size": params.min_cluster_size,
                        },
                        "summary": summary,
                    }),
                )?;
            }
            let mut csv = String::from("neuron,C,C_hat,max_height,top_activation\n");
            for s in &summary {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.neuron, s.clusters, s.surviving, s.max_height, s.top_activation
                ));
            }
            emit(None, &csv)
        }
        Command::Serve {
            job,
            top_k,
            port,
            host,
            reports,
        } => {
            let p = prepare(workers, cli.no_cache, &job)?;
            let defaults = Defaults {
                top_n: job.topn,
                d_max: p.params.map(|p| p.d_max),
                tau: job.tau,
                min_cluster_size: job.min_cluster_size,
                top_k,
            };
            let state = Arc::new(AppState {
                engine: p.engine,
                defaults,
                reports,
            });
            let rt = tokio::runtime::Runtime::new().map_err(|e| ForgeError::io("<runtime>", e))?;
            rt.block_on(crate::server::serve(state, SocketAddr::new(host, port)))
                .map_err(|e| ForgeError::io(format!("{host}:{port}"), e))
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| ForgeError::io(path, e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| ForgeError::io("<stdout>", e)),
    }
}

fn ingest(dir: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = load_store(dir)?;
    let raw = npy::load_npy(&dir.join(storeio::ACTIVATIONS))?;
    let store = &loaded.store;
    if let Some(out) = out {
        save_store(out, store)?;
        eprintln!("wrote pooled store to {}", out.display());
    }
    stdout_line(
        &json!({
            "schema": SCHEMA_VERSION,
            "layer": store.layer_name(),
            "images": store.len(),
            "neurons": store.dim(),
            "shape": raw.shape(),
            "dtype": match store.dtype() { Dtype::F32 => "f32", Dtype::F64 => "f64" },
            "fingerprint": loaded.fingerprint,
        })
        .to_string(),
    )
}
