//! HTTP service around the verification pipeline.
//!
//! Datasets and documents are uploaded once and addressed by content hash.
//! Each run is immutable; feedback on a claim starts a successor run that
//! inherits the parent's pins plus the new one.

pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use claimcheck_core::document::{ingest_document, DistanceProvider, DocumentFormat};
use claimcheck_core::fragments::{Category, FragmentKind, Target};
use claimcheck_core::pipeline::{
    verify, ClaimDetails, CustomQuery, DatasetSource, DocumentSource, Pin, PinSpec, Stage, VerifyConfig, LITERAL_CAP,
};
use claimcheck_core::query::AggFunction;
use claimcheck_core::verdict::{emit_markup, RankedCandidate};
use claimcheck_core::{Dataset, Report};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use store::{RunRecord, RunStatus, Store};

const MAX_UPLOAD: usize = 512 * 1024 * 1024;
const DEFAULT_CANDIDATES: usize = 10;
const LITERAL_PREVIEW: usize = 50;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(msg) = &self {
            log::error!("{msg}");
        }
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct RunResult {
    report: Report,
    details: Vec<ClaimDetails>,
}

struct LiveRun {
    record: RunRecord,
    stage: Option<Stage>,
    result: Option<Arc<RunResult>>,
}

type PairLocks = HashMap<(String, String), Arc<tokio::sync::Mutex<()>>>;

/// Shared service state: persistent store plus in-memory caches.
pub struct AppState {
    store: Store,
    defaults: VerifyConfig,
    datasets: Mutex<HashMap<String, Arc<Dataset>>>,
    runs: Mutex<HashMap<String, Arc<Mutex<LiveRun>>>>,
    pair_locks: Mutex<PairLocks>,
}

impl AppState {
    pub fn open(data_dir: impl Into<PathBuf>, defaults: VerifyConfig) -> std::io::Result<Arc<Self>> {
        defaults
            .validate()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        Ok(Arc::new(AppState {
            store: Store::open(data_dir)?,
            defaults,
            datasets: Mutex::default(),
            runs: Mutex::default(),
            pair_locks: Mutex::default(),
        }))
    }

    async fn dataset(self: &Arc<Self>, id: &str) -> ApiResult<Arc<Dataset>> {
        if let Some(d) = self.datasets.lock().unwrap().get(id) {
            return Ok(d.clone());
        }
        let state = self.clone();
        let id = id.to_string();
        blocking(move || {
            let source = state
                .store
                .load_dataset(&id)?
                .ok_or_else(|| ApiError::NotFound(format!("dataset {id}")))?;
            let built = Arc::new(Dataset::build(&source, LITERAL_CAP).map_err(|e| ApiError::Internal(describe(&e)))?);
            state.datasets.lock().unwrap().insert(id, built.clone());
            Ok(built)
        })
        .await
    }

    fn document(&self, id: &str) -> ApiResult<DocumentSource> {
        self.store
            .load_document(id)?
            .ok_or_else(|| ApiError::NotFound(format!("document {id}")))
    }

    fn pair_lock(&self, dataset: &str, document: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.pair_locks
            .lock()
            .unwrap()
            .entry((dataset.to_string(), document.to_string()))
            .or_default()
            .clone()
    }

    /// Current record and stage of a run, from memory or disk. Runs left
    /// unfinished by an earlier process are reported as failed.
    fn run_state(&self, id: &str) -> ApiResult<(RunRecord, Option<Stage>)> {
        if let Some(live) = self.runs.lock().unwrap().get(id) {
            let live = live.lock().unwrap();
            return Ok((live.record.clone(), live.stage));
        }
        let mut record = self
            .store
            .load_run(id)?
            .ok_or_else(|| ApiError::NotFound(format!("run {id}")))?;
        if matches!(record.status, RunStatus::Pending | RunStatus::Running) {
            record.status = RunStatus::Failed;
            record.error = Some("run interrupted".into());
        }
        Ok((record, None))
    }

    fn run_result(&self, id: &str) -> ApiResult<Arc<RunResult>> {
        let (record, _) = self.run_state(id)?;
        if record.status != RunStatus::Done {
            return Err(ApiError::Conflict(format!("run {id} is not done")));
        }
        if let Some(result) = self
            .runs
            .lock()
            .unwrap()
            .get(id)
            .and_then(|l| l.lock().unwrap().result.clone())
        {
            return Ok(result);
        }
        let report = self.store.load_report(id)?;
        let details = self.store.load_details(id)?;
        match (report, details) {
            (Some(report), Some(details)) => Ok(Arc::new(RunResult { report, details })),
            _ => Err(ApiError::Internal(format!("results of run {id} are missing"))),
        }
    }

    /// Persists a pending run and schedules it.
    fn start_run(
        self: &Arc<Self>,
        dataset_id: String,
        document_id: String,
        config: VerifyConfig,
        pins: PinSpec,
        parent: Option<String>,
    ) -> ApiResult<String> {
        let record = RunRecord {
            run_id: uuid::Uuid::new_v4().simple().to_string(),
            dataset_id,
            document_id,
            config,
            pins,
            parent,
            status: RunStatus::Pending,
            error: None,
        };
        self.store.save_run(&record)?;
        let run_id = record.run_id.clone();
        let live = Arc::new(Mutex::new(LiveRun {
            record,
            stage: None,
            result: None,
        }));
        self.runs.lock().unwrap().insert(run_id.clone(), live.clone());
        let state = self.clone();
        tokio::spawn(async move { state.execute(live).await });
        Ok(run_id)
    }

    async fn execute(self: Arc<Self>, live: Arc<Mutex<LiveRun>>) {
        let record = live.lock().unwrap().record.clone();
        let lock = self.pair_lock(&record.dataset_id, &record.document_id);
        let _guard = lock.lock().await;
        self.transition(&live, RunStatus::Running, None);
        let outcome = match (
            self.dataset(&record.dataset_id).await,
            self.document(&record.document_id),
        ) {
            (Ok(dataset), Ok(document)) => {
                let progress_live = live.clone();
                let store = self.store.clone();
                let run_id = record.run_id.clone();
                blocking(move || {
                    let progress = move |stage: Stage| progress_live.lock().unwrap().stage = Some(stage);
                    let out = verify(&dataset, &document, &record.config, &record.pins, Some(&progress))
                        .map_err(|e| ApiError::BadRequest(describe(&e)))?;
                    store.save_result(&run_id, &out.report, &out.details)?;
                    Ok(RunResult {
                        report: out.report,
                        details: out.details,
                    })
                })
                .await
            }
            (Err(e), _) | (_, Err(e)) => Err(e),
        };
        match outcome {
            Ok(result) => {
                live.lock().unwrap().result = Some(Arc::new(result));
                self.transition(&live, RunStatus::Done, None);
            }
            Err(e) => self.transition(&live, RunStatus::Failed, Some(e.to_string())),
        }
    }

    fn transition(&self, live: &Mutex<LiveRun>, status: RunStatus, error: Option<String>) {
        let record = {
            let mut live = live.lock().unwrap();
            live.record.status = status;
            live.record.error = error;
            live.record.clone()
        };
        if let Err(e) = self.store.save_run(&record) {
            log::error!("persisting run {}: {e}", record.run_id);
        }
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}", get(dataset_summary))
        .route("/documents", post(upload_document))
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(run_view))
        .route("/runs/{id}/markup", get(run_markup))
        .route("/runs/{id}/claims/{cid}/candidates", get(claim_candidates))
        .route("/runs/{id}/claims/{cid}/fragments", get(claim_fragments))
        .route("/runs/{id}/claims/{cid}/feedback", post(claim_feedback))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Binds `listen` and serves until interrupted.
pub async fn serve(listen: SocketAddr, data_dir: &Path, defaults: VerifyConfig) -> std::io::Result<()> {
    let state = AppState::open(data_dir, defaults)?;
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Error message including its source chain.
fn describe(e: &dyn std::error::Error) -> String {
    let mut text = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        text.push_str(": ");
        text.push_str(&c.to_string());
        cause = c.source();
    }
    text
}

fn bad(e: impl std::fmt::Display) -> ApiError {
    ApiError::BadRequest(e.to_string())
}

fn table_name(filename: Option<&str>, index: usize) -> String {
    filename
        .and_then(|f| Path::new(f).file_stem())
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("table{index}"))
}

#[derive(Serialize)]
struct ColumnSummary {
    name: String,
    numeric: bool,
    distinct: usize,
    literals: Vec<String>,
}

#[derive(Serialize)]
struct TableSummary {
    name: String,
    rows: usize,
    columns: Vec<ColumnSummary>,
}

#[derive(Serialize)]
struct DatasetSummary {
    dataset_id: String,
    tables: Vec<TableSummary>,
    functions: Vec<&'static str>,
}

fn summarize(dataset: &Dataset) -> DatasetSummary {
    DatasetSummary {
        dataset_id: dataset.id.clone(),
        tables: dataset
            .schema
            .tables()
            .iter()
            .map(|t| TableSummary {
                name: t.name().to_string(),
                rows: t.row_count(),
                columns: t
                    .columns()
                    .iter()
                    .map(|c| ColumnSummary {
                        name: c.name().to_string(),
                        numeric: c.is_numeric(),
                        distinct: c.distinct_literals().len(),
                        literals: c.distinct_literals().iter().take(LITERAL_PREVIEW).cloned().collect(),
                    })
                    .collect(),
            })
            .collect(),
        functions: AggFunction::ALL.iter().map(|f| f.name()).collect(),
    }
}

async fn upload_dataset(State(state): State<Arc<AppState>>, mut form: Multipart) -> ApiResult<impl IntoResponse> {
    let mut source = DatasetSource::default();
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let filename = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(bad)?;
        let text = || String::from_utf8(bytes.to_vec()).map_err(|_| bad(format!("field `{name}` is not UTF-8")));
        match name.as_str() {
            "csv" => {
                let table = table_name(filename.as_deref(), source.tables.len());
                if source.tables.iter().any(|(t, _)| *t == table) {
                    return Err(bad(format!("duplicate table `{table}`")));
                }
                source.tables.push((table, bytes.to_vec()));
            }
            "schema" => source.schema = Some(text()?),
            "dictionary" => source.dictionary = Some(text()?),
            "synonyms" => source.synonyms = Some(text()?),
            other => return Err(bad(format!("unexpected field `{other}`"))),
        }
    }
    if source.tables.is_empty() {
        return Err(bad("at least one `csv` field is required"));
    }
    let state2 = state.clone();
    let dataset = blocking(move || {
        let dataset = Dataset::build(&source, LITERAL_CAP).map_err(|e| bad(describe(&e)))?;
        state2.store.save_dataset(&source).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidInput => bad(e),
            _ => ApiError::from(e),
        })?;
        Ok(Arc::new(dataset))
    })
    .await?;
    state
        .datasets
        .lock()
        .unwrap()
        .insert(dataset.id.clone(), dataset.clone());
    Ok((StatusCode::CREATED, Json(summarize(&dataset))))
}

async fn dataset_summary(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    let dataset = state.dataset(&id).await?;
    Ok(Json(summarize(&dataset)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentBody {
    text: String,
    #[serde(default)]
    parses: Option<Value>,
}

async fn upload_document(State(state): State<Arc<AppState>>, req: Request) -> ApiResult<impl IntoResponse> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let source = if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &()).await.map_err(bad)?;
        let mut source = DocumentSource::default();
        let mut seen_text = false;
        while let Some(field) = form.next_field().await.map_err(bad)? {
            let name = field.name().unwrap_or_default().to_string();
            let value = field.text().await.map_err(bad)?;
            match name.as_str() {
                "document" => {
                    source.text = value;
                    seen_text = true;
                }
                "parses" => source.parses = Some(value),
                other => return Err(bad(format!("unexpected field `{other}`"))),
            }
        }
        if !seen_text {
            return Err(bad("a `document` field is required"));
        }
        source
    } else {
        let bytes = axum::body::to_bytes(req.into_body(), MAX_UPLOAD).await.map_err(bad)?;
        if content_type.starts_with("application/json") {
            let body: DocumentBody = serde_json::from_slice(&bytes).map_err(bad)?;
            let parses = match body.parses {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s),
                Some(v) => Some(v.to_string()),
            };
            DocumentSource {
                text: body.text,
                parses,
            }
        } else {
            let text = String::from_utf8(bytes.to_vec()).map_err(|_| bad("document is not UTF-8"))?;
            DocumentSource { text, parses: None }
        }
    };
    ingest_document(&source.text, DocumentFormat::Auto).map_err(bad)?;
    if let Some(p) = &source.parses {
        DistanceProvider::from_sidecar(p).map_err(bad)?;
    }
    let id = state.store.save_document(&source)?;
    Ok((StatusCode::CREATED, Json(json!({ "document_id": id }))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    dataset_id: String,
    document_id: String,
    #[serde(default)]
    config: Option<serde_json::Map<String, Value>>,
}

/// Overlays user keys on the service defaults; unknown keys are rejected.
fn merge_config(defaults: &VerifyConfig, overrides: Option<serde_json::Map<String, Value>>) -> ApiResult<VerifyConfig> {
    let Some(overrides) = overrides else {
        return Ok(defaults.clone());
    };
    let Value::Object(mut base) = serde_json::to_value(defaults).map_err(|e| ApiError::Internal(e.to_string()))? else {
        return Err(ApiError::Internal("config is not an object".into()));
    };
    for (key, value) in overrides {
        if !base.contains_key(&key) {
            return Err(bad(format!("unknown config key `{key}`")));
        }
        base.insert(key, value);
    }
    let config: VerifyConfig = serde_json::from_value(Value::Object(base)).map_err(bad)?;
    config.validate().map_err(bad)?;
    Ok(config)
}

async fn create_run(State(state): State<Arc<AppState>>, Json(body): Json<CreateRun>) -> ApiResult<impl IntoResponse> {
    let config = merge_config(&state.defaults, body.config)?;
    state.dataset(&body.dataset_id).await?;
    state.document(&body.document_id)?;
    let run_id = state.start_run(body.dataset_id, body.document_id, config, PinSpec::default(), None)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

#[derive(Serialize)]
struct RunView {
    run_id: String,
    status: RunStatus,
    dataset_id: String,
    document_id: String,
    parent: Option<String>,
    config: VerifyConfig,
    pins: PinSpec,
    progress: Option<Stage>,
    error: Option<String>,
    report: Option<Value>,
}

async fn run_view(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let (record, progress) = state.run_state(&id)?;
    let report = if record.status == RunStatus::Done {
        let result = state.run_result(&id)?;
        Some(serde_json::to_value(&result.report).map_err(|e| ApiError::Internal(e.to_string()))?)
    } else {
        None
    };
    Ok(Json(RunView {
        run_id: record.run_id,
        status: record.status,
        dataset_id: record.dataset_id,
        document_id: record.document_id,
        parent: record.parent,
        config: record.config,
        pins: record.pins,
        progress,
        error: record.error,
        report,
    }))
}

async fn run_markup(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let result = state.run_result(&id)?;
    let (record, _) = state.run_state(&id)?;
    let source = state.document(&record.document_id)?;
    let doc = ingest_document(&source.text, record.config.format).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Html(emit_markup(&doc, &result.report.claims)))
}

fn claim_details(result: &RunResult, claim: usize) -> ApiResult<&ClaimDetails> {
    result
        .details
        .iter()
        .find(|d| d.claim_id == claim)
        .ok_or_else(|| ApiError::NotFound(format!("claim {claim}")))
}

#[derive(Deserialize)]
struct CandidateParams {
    k: Option<usize>,
}

#[derive(Serialize)]
struct CandidateView<'a> {
    index: usize,
    #[serde(flatten)]
    candidate: &'a RankedCandidate,
}

async fn claim_candidates(
    State(state): State<Arc<AppState>>,
    UrlPath((id, claim)): UrlPath<(String, usize)>,
    Query(params): Query<CandidateParams>,
) -> ApiResult<Response> {
    let result = state.run_result(&id)?;
    let details = claim_details(&result, claim)?;
    let k = params.k.unwrap_or(DEFAULT_CANDIDATES);
    let candidates: Vec<CandidateView> = details
        .candidates
        .iter()
        .take(k)
        .enumerate()
        .map(|(index, candidate)| CandidateView { index, candidate })
        .collect();
    Ok(Json(json!({ "claim_id": claim, "total": details.candidates.len(), "candidates": candidates })).into_response())
}

#[derive(Serialize)]
struct FragmentView {
    id: u32,
    label: String,
    score: f64,
    marginal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    function: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    literal: Option<String>,
}

async fn claim_fragments(
    State(state): State<Arc<AppState>>,
    UrlPath((id, claim)): UrlPath<(String, usize)>,
) -> ApiResult<impl IntoResponse> {
    let result = state.run_result(&id)?;
    let (record, _) = state.run_state(&id)?;
    let dataset = state.dataset(&record.dataset_id).await?;
    let details = claim_details(&result, claim)?;
    let schema = &dataset.schema;
    let mut grouped: [Vec<FragmentView>; 3] = Default::default();
    for f in &details.fragments {
        let mut view = FragmentView {
            id: f.id.0,
            label: f.label.clone(),
            score: f.score,
            marginal: f.marginal,
            function: None,
            target: None,
            column: None,
            literal: None,
        };
        match dataset.catalog.kind(f.id) {
            FragmentKind::Function(func) => view.function = Some(func.name()),
            FragmentKind::AggColumn(Target::Star(t)) => view.target = Some(format!("{}.*", schema.table(t).name())),
            FragmentKind::AggColumn(Target::Column(c)) => view.target = Some(schema.column_name(c)),
            FragmentKind::Predicate { column, literal } => {
                view.column = Some(schema.column_name(column));
                view.literal = schema.column(column).distinct_literals().get(literal as usize).cloned();
            }
        }
        let slot = match f.category {
            Category::Function => 0,
            Category::AggColumn => 1,
            Category::Predicate => 2,
        };
        grouped[slot].push(view);
    }
    let [functions, targets, predicates] = grouped;
    Ok(Json(json!({
        "claim_id": claim,
        "functions": functions,
        "targets": targets,
        "predicates": predicates,
    })))
}

/// Exactly one of the fields must be present.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    select: Option<usize>,
    custom: Option<CustomQuery>,
    #[serde(default)]
    not_a_claim: bool,
}

async fn claim_feedback(
    State(state): State<Arc<AppState>>,
    UrlPath((id, claim)): UrlPath<(String, usize)>,
    Json(body): Json<FeedbackBody>,
) -> ApiResult<impl IntoResponse> {
    let given = body.select.is_some() as u8 + body.custom.is_some() as u8 + body.not_a_claim as u8;
    if given != 1 {
        return Err(bad("feedback needs exactly one of `select`, `custom`, `not_a_claim`"));
    }
    let result = state.run_result(&id)?;
    let (parent, _) = state.run_state(&id)?;
    let details = claim_details(&result, claim)?;
    let pin = if let Some(index) = body.select {
        let chosen = details
            .candidates
            .get(index)
            .ok_or_else(|| bad(format!("candidate {index} out of range for claim {claim}")))?;
        Pin::Query(chosen.query.clone())
    } else if let Some(custom) = body.custom {
        let dataset = state.dataset(&parent.dataset_id).await?;
        Pin::Query(custom.resolve(&dataset.schema).map_err(|e| bad(describe(&e)))?)
    } else {
        Pin::NotAClaim
    };
    let mut pins = parent.pins.clone();
    pins.pins.insert(claim, pin);
    let run_id = state.start_run(parent.dataset_id, parent.document_id, parent.config, pins, Some(id))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}
