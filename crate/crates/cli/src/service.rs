//! Read-only HTTP API over one map artifact and its corpus.
//!
//! | route | answer |
//! |---|---|
//! | `GET /api/map/meta` | counts, variant, K, hashes, metric means |
//! | `GET /api/map/points` | down-sampled points in bounds (`sample`, `seed`) |
//! | `GET /api/example/{id}` | pair text, metrics, features, signals |
//! | `GET /api/region/stats` | count, means, feature means, CM histogram |
//! | `POST /api/selection` | `{bounds, token_budget, seed}` to a selection id |
//! | `GET /api/selection/{id}/ids` | selected ids |
//! | `GET /api/selection/{id}/export` | selected pairs as text (`side=source\|target`) |
//! | `GET /api/correlations` | Spearman tables |
//!
//! Bounds are the query parameters `min_tm`, `max_tm`, `min_gs`, `max_gs`
//! (defaults 0 and 1). Errors are `{"error": {"code", "message"}}`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock, RwLock};

use anyhow::{Context, Result, ensure};
use axum::Router;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use memcart::artifact::read_map_artifact;
use memcart::cartography::{
    Bounds, MemorisationMap, SampleResult, correlation_table, read_selection_manifest, region_summary, sample_points,
    specialised_sample, write_selection_manifest,
};
use memcart::corpus::Corpus;
use memcart::corpus::text::whitespace_tokens;
use memcart::features::FEATURE_NAMES;
use memcart::hashing::sha256_hex;
use memcart::metrics::Metric;
use memcart::signals::SIGNAL_NAMES;
use serde::Deserialize;
use serde_json::{Value, json};

use crate::cli::ServeArgs;
use crate::commands::load_corpus;
use crate::config::Config;

pub const MAX_POINTS: usize = 50_000;

pub struct AppState {
    map: MemorisationMap,
    corpus: Corpus,
    artifact_hash: String,
    source_tokens: Vec<usize>,
    selection_dir: Option<PathBuf>,
    selections: RwLock<HashMap<String, SampleResult>>,
    correlations: OnceLock<Result<Value, String>>,
}

impl AppState {
    pub fn new(map: MemorisationMap, corpus: Corpus, selection_dir: Option<PathBuf>) -> Result<Self> {
        ensure!(
            map.len() == corpus.len(),
            "map has {} rows, corpus has {} pairs",
            map.len(),
            corpus.len()
        );
        let corpus_hash = corpus.content_hash();
        ensure!(
            corpus_hash == map.corpus_hash,
            "map was built for corpus {}, this corpus hashes to {corpus_hash}",
            map.corpus_hash
        );
        let artifact_hash = map.content_hash();
        let source_tokens = (0..corpus.len())
            .map(|i| corpus.get(i).map_or(0, |p| whitespace_tokens(&p.source).len()))
            .collect();
        let mut selections = HashMap::new();
        if let Some(dir) = &selection_dir {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                let Some(id) = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_suffix(".selection.tsv"))
                else {
                    continue;
                };
                let (sel, hash) = read_selection_manifest(&path)?;
                if hash == artifact_hash {
                    selections.insert(id.to_owned(), sel);
                }
            }
        }
        Ok(Self {
            map,
            corpus,
            artifact_hash,
            source_tokens,
            selection_dir,
            selections: RwLock::new(selections),
            correlations: OnceLock::new(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/map/meta", get(meta))
        .route("/api/map/points", get(points))
        .route("/api/example/{id}", get(example))
        .route("/api/region/stats", get(region_stats))
        .route("/api/selection", post(create_selection))
        .route("/api/selection/{id}/ids", get(selection_ids))
        .route("/api/selection/{id}/export", get(selection_export))
        .route("/api/correlations", get(correlations))
        .with_state(state)
}

pub fn serve_command(cfg: &Config, a: ServeArgs) -> Result<()> {
    let mut r = cfg.section("serve");
    let map_path = r.path("map", a.map)?;
    let map = read_map_artifact(&map_path).with_context(|| format!("reading {}", map_path.display()))?;
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let host: String = r.value("host", a.host, "127.0.0.1".to_owned())?;
    let port: u16 = r.value("port", a.port, 8080)?;
    let selection_dir = r.opt_path("selection_dir", a.selection_dir)?;
    let state = Arc::new(AppState::new(map, corpus, selection_dir)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        eprintln!("serving {} on http://{}", map_path.display(), listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code,
            message: message.into(),
        }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, axum::Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<axum::Json<Value>, ApiError>;
type Params = Query<HashMap<String, String>>;

fn parse_bounds(q: &HashMap<String, String>) -> std::result::Result<Bounds, ApiError> {
    let get = |k: &str, default: f64| -> std::result::Result<f64, ApiError> {
        match q.get(k) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| ApiError::unprocessable("invalid_bounds", format!("{k}={v:?} is not a number"))),
        }
    };
    Bounds::new(get("min_tm", 0.0)?, get("max_tm", 1.0)?, get("min_gs", 0.0)?, get("max_gs", 1.0)?)
        .map_err(|e| ApiError::unprocessable("invalid_bounds", e.to_string()))
}

fn parse_count<T: std::str::FromStr>(
    q: &HashMap<String, String>,
    key: &str,
    default: T,
) -> std::result::Result<T, ApiError> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::unprocessable("invalid_parameter", format!("{key}={v:?} is not a non-negative integer"))),
    }
}

fn bounds_json(b: &Bounds) -> Value {
    json!({"min_tm": b.tm_min, "max_tm": b.tm_max, "min_gs": b.gs_min, "max_gs": b.gs_max})
}

fn means_json(means: Option<[f64; 3]>) -> Value {
    means.map_or(Value::Null, |m| json!({"tm": m[0], "gs": m[1], "cm": m[2]}))
}

async fn meta(State(s): State<Arc<AppState>>) -> ApiResult {
    let mut status_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut flag_counts: BTreeMap<String, usize> = BTreeMap::new();
    for row in s.map.rows() {
        *status_counts.entry(row.record.status.to_string()).or_default() += 1;
        if !row.record.flags.is_empty() {
            for name in row.record.flags.to_string().split(',') {
                *flag_counts.entry(name.to_owned()).or_default() += 1;
            }
        }
    }
    let summary = region_summary(&s.map, Bounds::FULL).map_err(|e| ApiError::unprocessable("internal", e.to_string()))?;
    Ok(axum::Json(json!({
        "n_rows": s.map.len(),
        "n_valid": s.map.n_valid(),
        "variant": s.map.variant.to_string(),
        "k": s.map.n_seeds,
        "corpus_hash": s.map.corpus_hash,
        "artifact_hash": s.artifact_hash,
        "status_counts": status_counts,
        "flag_counts": flag_counts,
        "means": means_json(summary.means),
    })))
}

async fn points(State(s): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let bounds = parse_bounds(&q)?;
    let sample = parse_count(&q, "sample", MAX_POINTS)?;
    if sample > MAX_POINTS {
        return Err(ApiError::unprocessable(
            "invalid_parameter",
            format!("sample={sample} exceeds the limit of {MAX_POINTS}"),
        ));
    }
    let seed = parse_count(&q, "seed", 0u64)?;
    let ps = sample_points(&s.map, bounds, sample, seed).map_err(|e| ApiError::unprocessable("invalid_bounds", e.to_string()))?;
    let pts: Vec<Value> = ps
        .points
        .iter()
        .map(|p| json!({"id": p.id, "tm": p.tm, "gs": p.gs, "cm": p.cm}))
        .collect();
    Ok(axum::Json(json!({
        "bounds": bounds_json(&bounds),
        "seed": seed,
        "total_in_bounds": ps.total_in_bounds,
        "returned": pts.len(),
        "points": pts,
    })))
}

async fn example(State(s): State<Arc<AppState>>, Path(raw): Path<String>) -> ApiResult {
    let unknown = || ApiError::not_found("unknown_example", format!("no example {raw:?}"));
    let id: usize = raw.parse().map_err(|_| unknown())?;
    let (Some(row), Some(pair)) = (s.map.get(id), s.corpus.get(id)) else {
        return Err(unknown());
    };
    let rec = &row.record;
    let flags: Vec<String> = if rec.flags.is_empty() {
        Vec::new()
    } else {
        rec.flags.to_string().split(',').map(str::to_owned).collect()
    };
    let features: serde_json::Map<String, Value> = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| ((*n).to_owned(), json!(row.features.get(i))))
        .collect();
    let signals = row.signals.map_or(Value::Null, |sig| {
        let m: serde_json::Map<String, Value> = SIGNAL_NAMES
            .iter()
            .zip(sig.to_array())
            .map(|(n, v)| ((*n).to_owned(), json!(v)))
            .collect();
        Value::Object(m)
    });
    Ok(axum::Json(json!({
        "id": id,
        "source": pair.source,
        "target": pair.target,
        "status": rec.status.to_string(),
        "metrics": rec.metrics.map_or(Value::Null, |m| json!({"tm": m.tm, "gs": m.gs, "cm": m.cm})),
        "n_train": rec.n_train_models,
        "n_heldout": rec.n_heldout_models,
        "flags": flags,
        "features": features,
        "signals": signals,
    })))
}

async fn region_stats(State(s): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let bounds = parse_bounds(&q)?;
    let sum = region_summary(&s.map, bounds).map_err(|e| ApiError::unprocessable("invalid_bounds", e.to_string()))?;
    let features: serde_json::Map<String, Value> = FEATURE_NAMES
        .iter()
        .zip(sum.feature_means)
        .map(|(n, v)| ((*n).to_owned(), json!(v)))
        .collect();
    Ok(axum::Json(json!({
        "bounds": bounds_json(&bounds),
        "n": sum.n,
        "means": means_json(sum.means),
        "feature_means": features,
        "cm_histogram": sum.cm_histogram,
    })))
}

#[derive(Debug, Deserialize)]
struct BoundsBody {
    min_tm: f64,
    max_tm: f64,
    min_gs: f64,
    max_gs: f64,
}

#[derive(Debug, Deserialize)]
struct SelectionRequest {
    bounds: BoundsBody,
    token_budget: usize,
    #[serde(default)]
    seed: u64,
}

fn selection_id(bounds: &Bounds, budget: usize, seed: u64, artifact_hash: &str) -> String {
    let key = format!("{bounds}|{budget}|{seed}|{artifact_hash}");
    sha256_hex(key)[..16].to_owned()
}

fn selection_json(id: &str, sel: &SampleResult) -> Value {
    json!({
        "id": id,
        "bounds": bounds_json(&sel.bounds),
        "token_budget": sel.reference_tokens,
        "seed": sel.seed,
        "n": sel.ids.len(),
        "total_tokens": sel.total_tokens,
        "n_candidates": sel.n_candidates,
        "partial": sel.partial,
    })
}

async fn create_selection(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: SelectionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable("invalid_body", e.to_string()))?;
    let b = req.bounds;
    let bounds = Bounds::new(b.min_tm, b.max_tm, b.min_gs, b.max_gs)
        .map_err(|e| ApiError::unprocessable("invalid_bounds", e.to_string()))?;
    let id = selection_id(&bounds, req.token_budget, req.seed, &s.artifact_hash);
    if let Some(sel) = s.selections.read().expect("selection lock").get(&id) {
        return Ok(axum::Json(selection_json(&id, sel)));
    }
    let sel = specialised_sample(&s.map, bounds, req.token_budget, &s.source_tokens, req.seed)
        .map_err(|e| ApiError::unprocessable("invalid_selection", e.to_string()))?;
    if let Some(dir) = &s.selection_dir {
        write_selection_manifest(&sel, &s.artifact_hash, &dir.join(format!("{id}.selection.tsv"))).map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "storage",
            message: e.to_string(),
        })?;
    }
    let out = selection_json(&id, &sel);
    s.selections.write().expect("selection lock").insert(id, sel);
    Ok(axum::Json(out))
}

fn lookup_selection(s: &AppState, id: &str) -> std::result::Result<SampleResult, ApiError> {
    s.selections
        .read()
        .expect("selection lock")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown_selection", format!("no selection {id:?}")))
}

async fn selection_ids(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let sel = lookup_selection(&s, &id)?;
    let mut body = selection_json(&id, &sel);
    body["ids"] = json!(sel.ids);
    Ok(axum::Json(body))
}

/// Plain text, one selected pair per line in sampling order:
/// `source<TAB>target`, or a single side with `side=source|target`.
async fn selection_export(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Params,
) -> std::result::Result<Response, ApiError> {
    let sel = lookup_selection(&s, &id)?;
    let side = q.get("side").map_or("both", String::as_str);
    if !matches!(side, "both" | "source" | "target") {
        return Err(ApiError::unprocessable("invalid_parameter", format!("side={side:?}")));
    }
    let mut text = String::new();
    for &i in &sel.ids {
        let p = s.corpus.get(i).expect("selection ids come from this corpus");
        match side {
            "source" => text.push_str(&p.source),
            "target" => text.push_str(&p.target),
            _ => {
                text.push_str(&p.source);
                text.push('\t');
                text.push_str(&p.target);
            }
        }
        text.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

fn correlation_json(map: &MemorisationMap) -> Result<Value, String> {
    let t = correlation_table(map).map_err(|e| e.to_string())?;
    Ok(json!({
        "n_rows": t.n_rows,
        "features": FEATURE_NAMES,
        "metrics": Metric::ALL.map(Metric::name),
        "feature_metric": t.feature_metric,
        "feature_feature": t.feature_feature,
    }))
}

async fn correlations(State(s): State<Arc<AppState>>) -> ApiResult {
    let cached = s.correlations.get_or_init(|| correlation_json(&s.map));
    match cached {
        Ok(v) => Ok(axum::Json(v.clone())),
        Err(e) => Err(ApiError::unprocessable("insufficient_data", e.clone())),
    }
}
