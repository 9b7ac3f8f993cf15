use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use keycov::canonicalizer::{CanonicalizerError, ClusterProposal, EmbeddingProvider, ProposalStatus, ReviewDecision};
use keycov::corpus::{CorpusSplit, Page, SplitName};
use keycov::evaluation::{read_sweep_csv, SweepRow};
use keycov::extractor::{extract_page, ExtractedPair, ExtractorConfig, LogitBackend};
use keycov::inventory::{coverage, CanonicalKeyEntry, CoverageMode, InventoryError, KeyInventory};
use keycov::orchestrator::{
    run_batch_iteration, BatchIterationRecord, DecisionMode, DecisionOrigin, DecisionRecord, InventoryStore,
    LoopConfig, OrchestratorError,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn inventory_status(e: &InventoryError) -> StatusCode {
    match e {
        InventoryError::Conflict { .. } => StatusCode::CONFLICT,
        InventoryError::UnknownCanonical(_) => StatusCode::NOT_FOUND,
        InventoryError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            e if e.is_conflict() => StatusCode::CONFLICT,
            OrchestratorError::UnknownVersion(_) => StatusCode::NOT_FOUND,
            OrchestratorError::Canonicalizer(CanonicalizerError::UnknownProposal(_)) => StatusCode::NOT_FOUND,
            OrchestratorError::Canonicalizer(CanonicalizerError::InvalidDecision(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            OrchestratorError::Canonicalizer(CanonicalizerError::Inventory(i)) | OrchestratorError::Inventory(i) => {
                inventory_status(i)
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<InventoryError> for ApiError {
    fn from(e: InventoryError) -> Self {
        Self::new(inventory_status(&e), e.to_string())
    }
}

/// Gold pages and their split, for coverage queries.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub pages: Vec<Page>,
    pub split: CorpusSplit,
}

/// Shared service state. The store mutex is the single writer; readers use
/// the published snapshot.
pub struct AppState {
    store: Mutex<InventoryStore>,
    snapshot: RwLock<Arc<KeyInventory>>,
    backend: Box<dyn LogitBackend>,
    provider: Box<dyn EmbeddingProvider>,
    loop_cfg: LoopConfig,
    eval: Option<EvalData>,
    sweep_file: Option<PathBuf>,
    batches: Mutex<BatchLog>,
}

#[derive(Default)]
struct BatchLog {
    next_id: u64,
    records: Vec<BatchIterationRecord>,
}

fn next_batch_number(store: &InventoryStore) -> u64 {
    store
        .queue()
        .proposals()
        .iter()
        .filter_map(|p| p.proposal_id.strip_prefix('b')?.split_once("-p")?.0.parse::<u64>().ok())
        .max()
        .map_or(1, |n| n + 1)
}

impl AppState {
    pub fn new(
        store: InventoryStore,
        backend: Box<dyn LogitBackend>,
        provider: Box<dyn EmbeddingProvider>,
        loop_cfg: LoopConfig,
    ) -> Self {
        let snapshot = RwLock::new(Arc::new(store.current().clone()));
        let batches = Mutex::new(BatchLog { next_id: next_batch_number(&store), records: Vec::new() });
        Self { store: Mutex::new(store), snapshot, backend, provider, loop_cfg, eval: None, sweep_file: None, batches }
    }

    pub fn with_eval(mut self, eval: EvalData) -> Self {
        self.eval = Some(eval);
        self
    }

    pub fn with_sweep_file(mut self, path: PathBuf) -> Self {
        self.sweep_file = Some(path);
        self
    }

    pub fn inventory(&self) -> Arc<KeyInventory> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    fn extractor(&self) -> &ExtractorConfig {
        &self.loop_cfg.extractor
    }

    /// Runs `f` with exclusive access to the store and republishes the
    /// current snapshot afterwards.
    fn write<T>(&self, f: impl FnOnce(&mut InventoryStore) -> Result<T, OrchestratorError>) -> Result<T, ApiError> {
        let mut store = self.store.lock().expect("store lock poisoned");
        let out = f(&mut store);
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(store.current().clone());
        Ok(out?)
    }
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/inventory", get(get_inventory))
        .route("/v1/inventory/aliases", post(post_alias))
        .route("/v1/extract", post(post_extract))
        .route("/v1/batches", post(post_batch).get(get_batches))
        .route("/v1/review/queue", get(get_queue))
        .route("/v1/review/decisions", post(post_decision))
        .route("/v1/metrics/coverage", get(get_coverage))
        .route("/v1/metrics/sweep", get(get_sweep))
        .with_state(state)
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "inventory_version": s.inventory().version() }))
}

#[derive(Debug, Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn get_inventory(State(s): State<Shared>, Query(q): Query<VersionQuery>) -> Result<Json<KeyInventory>, ApiError> {
    let current = s.inventory();
    match q.version {
        None => Ok(Json((*current).clone())),
        Some(v) if v == current.version() => Ok(Json((*current).clone())),
        Some(v) => blocking(move || {
            let store = s.store.lock().expect("store lock poisoned");
            Ok(Json(store.load_version(v)?))
        })
        .await,
    }
}

#[derive(Debug, Deserialize)]
struct AliasRequest {
    canonical: String,
    alias: String,
}

async fn post_alias(State(s): State<Shared>, Json(req): Json<AliasRequest>) -> Result<Json<DecisionRecord>, ApiError> {
    blocking(move || s.write(|store| store.register_alias(&req.canonical, &req.alias)).map(Json)).await
}

#[derive(Debug, Deserialize)]
pub struct ExtractRequest {
    pub text: String,
    pub fraction: Option<f64>,
    pub keys: Option<Vec<String>>,
    pub include_aliases: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub inventory_version: u64,
    pub pairs: Vec<ExtractedPair>,
}

/// The inventory view an extraction request asks for.
pub fn request_view(inv: &KeyInventory, fraction: Option<f64>, keys: Option<&[String]>, include_aliases: bool) -> Result<KeyInventory, InventoryError> {
    let view = match (fraction, keys) {
        (Some(_), Some(_)) => return Err(InventoryError::Invalid("give either fraction or keys, not both".into())),
        (Some(f), None) => inv.top_fraction_keys(f)?,
        (None, Some(k)) => inv.restrict_to(k)?,
        (None, None) => inv.clone(),
    };
    if include_aliases {
        return Ok(view);
    }
    let bare = view
        .entries()
        .iter()
        .map(|e| CanonicalKeyEntry { aliases: Vec::new(), ..e.clone() })
        .collect();
    KeyInventory::from_entries(bare)
}

async fn post_extract(State(s): State<Shared>, Json(req): Json<ExtractRequest>) -> Result<Json<ExtractResponse>, ApiError> {
    blocking(move || {
        let inv = s.inventory();
        let view = request_view(&inv, req.fraction, req.keys.as_deref(), req.include_aliases.unwrap_or(true))?;
        let pairs = extract_page(&req.text, &view, s.backend.as_ref(), s.extractor())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(Json(ExtractResponse { inventory_version: inv.version(), pairs }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct BatchRequest {
    pages: Vec<Page>,
    #[serde(default)]
    mode: DecisionMode,
    batch_id: Option<String>,
}

async fn post_batch(State(s): State<Shared>, Json(req): Json<BatchRequest>) -> Result<Json<BatchIterationRecord>, ApiError> {
    for p in &req.pages {
        p.validate().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("page {}: {e}", p.page_id)))?;
    }
    blocking(move || {
        let mut log = s.batches.lock().expect("batch log poisoned");
        let batch_id = req.batch_id.clone().unwrap_or_else(|| log.next_id.to_string());
        let cfg = LoopConfig { mode: req.mode, ..s.loop_cfg.clone() };
        let eval = s.eval.as_ref().map(|e| e.split.pages(SplitName::Test, &e.pages).into_iter().cloned().collect::<Vec<_>>());
        let outcome = s.write(|store| {
            run_batch_iteration(store, &batch_id, &req.pages, s.backend.as_ref(), s.provider.as_ref(), &cfg, eval.as_deref())
        })?;
        if req.batch_id.is_none() {
            log.next_id += 1;
        }
        log.records.push(outcome.record.clone());
        Ok(Json(outcome.record))
    })
    .await
}

async fn get_batches(State(s): State<Shared>) -> Json<Vec<BatchIterationRecord>> {
    Json(s.batches.lock().expect("batch log poisoned").records.clone())
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
}

async fn get_queue(State(s): State<Shared>, Query(q): Query<QueueQuery>) -> Result<Json<Vec<ClusterProposal>>, ApiError> {
    let status = q.status.map(|v| v.parse::<ProposalStatus>()).transpose().map_err(ApiError::bad_request)?;
    let store = s.store.lock().expect("store lock poisoned");
    let items = store.queue().proposals().iter().filter(|p| status.is_none_or(|st| p.status == st)).cloned().collect();
    Ok(Json(items))
}

async fn post_decision(State(s): State<Shared>, Json(d): Json<ReviewDecision>) -> Result<Json<DecisionRecord>, ApiError> {
    blocking(move || s.write(|store| store.decide(&d, DecisionOrigin::Interactive)).map(Json)).await
}

#[derive(Debug, Deserialize)]
struct CoverageQuery {
    split: Option<String>,
    fraction: Option<f64>,
    mode: Option<String>,
}

async fn get_coverage(State(s): State<Shared>, Query(q): Query<CoverageQuery>) -> Result<Json<serde_json::Value>, ApiError> {
    let split: SplitName = q.split.as_deref().unwrap_or("test").parse().map_err(ApiError::bad_request)?;
    let mode: CoverageMode = q.mode.as_deref().unwrap_or("occurrence").parse().map_err(ApiError::bad_request)?;
    let eval = s.eval.as_ref().ok_or_else(|| ApiError::not_found("no evaluation corpus configured"))?;
    let inv = s.inventory();
    let view = match q.fraction {
        None => (*inv).clone(),
        Some(f) => inv.with_frequencies_from(eval.split.pages(SplitName::Train, &eval.pages)).top_fraction_keys(f)?,
    };
    let value = coverage(&view, eval.split.pages(split, &eval.pages), mode)?;
    Ok(Json(json!({
        "coverage": value,
        "mode": mode,
        "split": split,
        "fraction": q.fraction,
        "inventory_version": inv.version(),
    })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRow>,
}

async fn get_sweep(State(s): State<Shared>) -> Result<Json<SweepResponse>, ApiError> {
    let path = s.sweep_file.clone().ok_or_else(|| ApiError::not_found("no sweep table configured"))?;
    blocking(move || {
        let text = std::fs::read_to_string(&path).map_err(|e| ApiError::not_found(format!("{}: {e}", path.display())))?;
        let internal = |e: String| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e);
        let rows = if path.extension().is_some_and(|x| x == "json") {
            serde_json::from_str(&text).map_err(|e| internal(e.to_string()))?
        } else {
            read_sweep_csv(text.as_bytes()).map_err(|e| internal(e.to_string()))?
        };
        Ok(Json(SweepResponse { rows }))
    })
    .await
}
