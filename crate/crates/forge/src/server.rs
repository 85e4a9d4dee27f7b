//! Read-only HTTP API over one store.
//!
//! Every JSON body carries `"schema": 1`. Bad query parameters give 400
//! with a message per offending field; unknown neurons and images give 404.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use concept_forge_core::pipeline::Params;
use concept_forge_core::report::SCHEMA_VERSION;
use serde::Serialize;
use serde_json::json;

use crate::engine::{Engine, NeuronSummary};
use crate::error::ForgeError;
use crate::report_path;

/// Parameters used when a request leaves them out.
#[derive(Debug, Clone, Copy)]
pub struct Defaults {
    pub top_n: usize,
    /// `None` makes `dmax` mandatory.
    pub d_max: Option<f64>,
    pub tau: f64,
    pub min_cluster_size: usize,
    pub top_k: usize,
}

pub struct AppState {
    pub engine: Engine,
    pub defaults: Defaults,
    /// Directory of reports written by `discover`, served by `/api/report`.
    pub reports: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/neurons", get(neurons))
        .route("/api/neuron/{n}/dendrogram", get(dendrogram))
        .route("/api/neuron/{n}/concepts", get(concepts))
        .route("/api/report/{n}", get(report))
        .route("/api/thumb/{image_id}", get(thumb))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

enum ApiError {
    NotFound(String),
    BadRequest(BTreeMap<String, String>),
    Failed(ForgeError),
}

impl From<ForgeError> for ApiError {
    fn from(e: ForgeError) -> Self {
        Self::Failed(e)
    }
}

fn json_body<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let mut body = serde_json::to_vec_pretty(value).expect("serializable");
    body.push(b'\n');
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            Self::NotFound(msg) => json_body(
                StatusCode::NOT_FOUND,
                &json!({"schema": SCHEMA_VERSION, "error": msg}),
            ),
            Self::BadRequest(fields) => json_body(
                StatusCode::BAD_REQUEST,
                &json!({"schema": SCHEMA_VERSION, "error": "invalid parameters", "fields": fields}),
            ),
            Self::Failed(e) => {
                let status = if e.exit_code() == 2 {
                    StatusCode::BAD_REQUEST
                } else {
                    StatusCode::INTERNAL_SERVER_ERROR
                };
                json_body(
                    status,
                    &json!({"schema": SCHEMA_VERSION, "error": e.to_string()}),
                )
            }
        }
    }
}

type ApiResult = Result<Response, ApiError>;

fn neuron_of(state: &AppState, raw: &str) -> Result<usize, ApiError> {
    let d = state.engine.store().dim();
    match raw.parse::<usize>() {
        Ok(n) if n < d => Ok(n),
        _ => Err(ApiError::NotFound(format!(
            "no neuron {raw:?}; layer has {d}"
        ))),
    }
}

struct Request {
    params: Params,
    top_k: usize,
}

/// Reads the query parameters in `allowed`, falling back to the defaults.
fn parse_query(
    state: &AppState,
    q: &HashMap<String, String>,
    allowed: &[&str],
) -> Result<Request, ApiError> {
    let def = state.defaults;
    let mut errors = BTreeMap::new();
    for k in q.keys() {
        if !allowed.contains(&k.as_str()) {
            errors.insert(
                k.clone(),
                format!("unknown parameter; expected one of {}", allowed.join(", ")),
            );
        }
    }
    let mut field = |name: &str, check: &dyn Fn(&str) -> Result<(), String>| -> Option<String> {
        let v = q.get(name)?;
        match check(v) {
            Ok(()) => Some(v.clone()),
            Err(msg) => {
                errors.insert(name.into(), msg);
                None
            }
        }
    };
    let count = |min: usize| {
        move |s: &str| match s.parse::<usize>() {
            Ok(v) if v >= min => Ok(()),
            _ => Err(format!("must be an integer >= {min}")),
        }
    };
    let positive = |s: &str| match s.parse::<f64>() {
        Ok(v) if v > 0.0 && !v.is_nan() => Ok(()),
        _ => Err("must be a number > 0".to_string()),
    };
    let top_n = field("N", &count(2)).map_or(def.top_n, |s| s.parse().unwrap());
    let d_max = field("dmax", &|s| match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(()),
        _ => Err("must be a finite number > 0".to_string()),
    })
    .map(|s| s.parse().unwrap());
    let tau = field("tau", &positive).map_or(def.tau, |s| s.parse().unwrap());
    let min_cluster_size =
        field("min_cluster_size", &count(0)).map_or(def.min_cluster_size, |s| s.parse().unwrap());
    let top_k = field("K", &count(0)).map_or(def.top_k, |s| s.parse().unwrap());

    let m = state.engine.store().len();
    if top_n > m && !errors.contains_key("N") {
        errors.insert("N".into(), format!("exceeds the {m} stored inputs"));
    }
    if top_k > m && !errors.contains_key("K") {
        errors.insert("K".into(), format!("exceeds the {m} stored inputs"));
    }
    let d_max = match d_max.or(def.d_max) {
        Some(v) => v,
        None => {
            if allowed.contains(&"dmax") && !errors.contains_key("dmax") {
                errors.insert(
                    "dmax".into(),
                    "required: no default threshold for this layer".into(),
                );
            }
            f64::NAN
        }
    };
    if !errors.is_empty() {
        return Err(ApiError::BadRequest(errors));
    }
    Ok(Request {
        params: Params {
            top_n,
            d_max,
            tau,
            min_cluster_size,
        },
        top_k,
    })
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .expect("worker task panicked")
}

fn raw_json(body: Arc<Vec<u8>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        body.as_ref().clone(),
    )
        .into_response()
}

#[derive(Serialize)]
struct NeuronIndex<'a> {
    schema: u32,
    layer: &'a str,
    images: usize,
    neurons: usize,
    params: IndexParams,
    summary: Vec<NeuronSummary>,
}

#[derive(Serialize)]
struct IndexParams {
    top_n: usize,
    d_max: f64,
    tau: Option<f64>,
    min_cluster_size: usize,
}

impl From<Params> for IndexParams {
    fn from(p: Params) -> Self {
        Self {
            top_n: p.top_n,
            d_max: p.d_max,
            tau: p.tau.is_finite().then_some(p.tau),
            min_cluster_size: p.min_cluster_size,
        }
    }
}

async fn neurons(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let req = parse_query(&state, &q, &["N", "dmax", "tau", "min_cluster_size"])?;
    blocking(&state, move |s| {
        let store = s.engine.store();
        let all: Vec<usize> = (0..store.dim()).collect();
        let summary = s.engine.summaries(&all, &req.params)?;
        Ok(json_body(
            StatusCode::OK,
            &NeuronIndex {
                schema: SCHEMA_VERSION,
                layer: store.layer_name(),
                images: store.len(),
                neurons: store.dim(),
                params: req.params.into(),
                summary,
            },
        ))
    })
    .await
}

async fn dendrogram(
    State(state): State<Arc<AppState>>,
    Path(n): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let neuron = neuron_of(&state, &n)?;
    let req = parse_query(&state, &q, &["N"])?;
    blocking(&state, move |s| {
        let tree = s.engine.tree(neuron, req.params.top_n)?;
        let store = s.engine.store();
        Ok(json_body(
            StatusCode::OK,
            &json!({
                "schema": SCHEMA_VERSION,
                "neuron": neuron,
                "top_n": req.params.top_n,
                "ids": tree.selection.rows.iter().map(|&r| store.image_id(r)).collect::<Vec<_>>(),
                "activations": tree.selection.activations,
                "dendrogram": tree.dendrogram,
            }),
        ))
    })
    .await
}

const REPORT_QUERY: &[&str] = &["N", "dmax", "tau", "min_cluster_size", "K"];

async fn concepts(
    State(state): State<Arc<AppState>>,
    Path(n): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let neuron = neuron_of(&state, &n)?;
    let req = parse_query(&state, &q, REPORT_QUERY)?;
    blocking(&state, move |s| {
        Ok(raw_json(s.engine.report(neuron, &req.params, req.top_k)?))
    })
    .await
}

/// A report file written by `discover` when one exists, else a fresh
/// report under the given or default parameters.
async fn report(
    State(state): State<Arc<AppState>>,
    Path(n): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let neuron = neuron_of(&state, &n)?;
    if q.is_empty() {
        if let Some(dir) = &state.reports {
            if let Ok(body) = tokio::fs::read(report_path(dir, neuron)).await {
                return Ok(raw_json(Arc::new(body)));
            }
        }
    }
    let req = parse_query(&state, &q, REPORT_QUERY)?;
    blocking(&state, move |s| {
        Ok(raw_json(s.engine.report(neuron, &req.params, req.top_k)?))
    })
    .await
}

fn content_type(path: &std::path::Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn thumb(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let store = state.engine.store();
    let entry = store
        .row_of(&id)
        .map(|r| &store.images()[r])
        .ok_or_else(|| ApiError::NotFound(format!("no image {id:?}")))?;
    let rel = entry
        .thumb
        .as_ref()
        .ok_or_else(|| ApiError::NotFound(format!("image {id:?} has no thumbnail")))?;
    // manifest validation keeps thumbnail paths inside the store directory
    let path = state.engine.loaded().dir.join(rel);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::NotFound(format!("thumbnail for {id:?} is missing")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}
