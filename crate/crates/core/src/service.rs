//! HTTP daemon over the online phase.
//!
//! | method | path              | body                                         |
//! |--------|-------------------|----------------------------------------------|
//! | GET    | `/health`         |                                              |
//! | GET    | `/taxonomy`       |                                              |
//! | GET    | `/items/{id}`     |                                              |
//! | POST   | `/search`         | [`SearchBody`]                               |
//! | POST   | `/admin/reindex`  | `{"manifest_path": "..."}`                   |
//!
//! Failures are JSON `{"error": code, "detail": text}` with a 4xx status
//! for client faults and 5xx otherwise. The index sits behind an `Arc`
//! that searches clone under a short read lock; reindexing builds a new
//! index off to the side and swaps the pointer, so a search sees either the
//! old or the new index in full.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attrseq::load_checkpoint;
use crate::index::InvertedIndex;
use crate::pipeline::{read_manifest, Engine, KeywordTable, QueryOption, QueryRequest, QueryResponse};
use crate::roi::{BBox, Detector, NullDetector, StubDetector};
use crate::taxonomy::Taxonomy;
use crate::visfeat::{decode_image, DenseFeature, DistanceWeights};
use crate::Error;

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 16 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub taxonomy: Option<PathBuf>,
    pub index: PathBuf,
    pub checkpoint: PathBuf,
    pub detector_fixture: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub default_k: usize,
    pub default_weights: DistanceWeights,
}

/// Shared state behind every handler.
pub struct AppState {
    engine: Arc<Engine>,
    index: RwLock<Arc<InvertedIndex>>,
    writer: tokio::sync::Mutex<()>,
    default_k: usize,
    default_weights: DistanceWeights,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, index: InvertedIndex, default_k: usize, default_weights: DistanceWeights) -> Self {
        AppState {
            engine,
            index: RwLock::new(Arc::new(index)),
            writer: tokio::sync::Mutex::new(()),
            default_k,
            default_weights,
        }
    }

    /// The index as of now. Later swaps do not affect the returned handle.
    pub fn index(&self) -> Arc<InvertedIndex> {
        self.index.read().expect("index lock poisoned").clone()
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    fn swap(&self, index: InvertedIndex) {
        *self.index.write().expect("index lock poisoned") = Arc::new(index);
    }
}

/// `POST /search` payload.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBody {
    pub option: Option<QueryOption>,
    /// Base64 of a feature file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_b64: Option<String>,
    /// Base64 of an image (binary PPM).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guided_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance_weight: Option<f64>,
}

impl SearchBody {
    /// Converts to a pipeline request, filling defaults.
    pub fn into_request(self, default_k: usize, default_weights: DistanceWeights) -> Result<QueryRequest, ApiError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let option = self
            .option
            .ok_or_else(|| ApiError::bad_request("invalid_request", "missing field `option`"))?;
        let feature = self
            .feature_b64
            .map(|s| {
                let bytes = b64
                    .decode(s)
                    .map_err(|e| ApiError::bad_request("invalid_base64", format!("feature_b64: {e}")))?;
                DenseFeature::from_bytes(&bytes).map_err(ApiError::from)
            })
            .transpose()?;
        let image = self
            .image_b64
            .map(|s| {
                let bytes = b64
                    .decode(s)
                    .map_err(|e| ApiError::bad_request("invalid_base64", format!("image_b64: {e}")))?;
                decode_image(&bytes).map_err(ApiError::from)
            })
            .transpose()?;
        let weights = match self.appearance_weight {
            Some(w) => DistanceWeights::new(w)?,
            None => default_weights,
        };
        Ok(QueryRequest {
            option,
            image,
            feature,
            guided_category: self.guided_category,
            roi: self.roi,
            k: self.k.unwrap_or(default_k),
            weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn bad_request(error: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownItem(_) => return Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            Error::UnknownCategory(_) => "unknown_category",
            Error::UnknownSymbol(_) => "unknown_symbol",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Format { .. } | Error::Image(_) | Error::Json(_) => "invalid_payload",
            Error::Rejected(_) => "rejected",
            _ if e.is_client_error() => "invalid_request",
            _ => return Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        };
        Self::bad_request(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

/// All routes over `state`.
pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/taxonomy", get(taxonomy))
        .route("/items/{id}", get(item))
        .route("/search", post(search))
        .route("/admin/reindex", post(reindex))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "items": state.index().len() }))
}

async fn taxonomy(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let t = state.engine.taxonomy();
    Json(json!({
        "categories": t.categories(),
        "groups": t.groups(),
        "symbols": t.symbols(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub category: String,
    pub attributes: Vec<String>,
    pub roi: BBox,
    pub meta_text: String,
}

async fn item(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ItemView> {
    let index = state.index();
    let rec = index.get(&id).ok_or(Error::UnknownItem(id))?;
    let t = index.taxonomy();
    Ok(Json(ItemView {
        item_id: rec.item_id.clone(),
        category: t.categories()[rec.category].clone(),
        attributes: rec.attributes.iter().map(|&a| t.symbols()[a].clone()).collect(),
        roi: rec.roi,
        meta_text: rec.meta_text.clone(),
    }))
}

async fn search(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<QueryResponse> {
    let body: SearchBody = parse_json(&body)?;
    let request = body.into_request(state.default_k, state.default_weights)?;
    let index = state.index();
    let engine = state.engine.clone();
    let response = tokio::task::spawn_blocking(move || engine.query(&index, &request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReindexBody {
    manifest_path: PathBuf,
}

async fn reindex(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<serde_json::Value> {
    let body: ReindexBody = parse_json(&body)?;
    let _writer = state.writer.lock().await;
    let engine = state.engine.clone();
    let built = tokio::task::spawn_blocking(move || {
        let entries = read_manifest(&body.manifest_path)?;
        engine.build_index(&entries)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let (index, report) = built;
    let items = index.len();
    state.swap(index);
    log::info!("reindexed: {items} items, {} rejected", report.rejected.len());
    Ok(Json(json!({ "items": items, "rejected": report.rejected })))
}

/// Loads everything `config` points at.
pub fn load_state(config: &ServiceConfig) -> crate::Result<AppState> {
    if config.default_k == 0 {
        return Err(Error::InvalidInput("default k must be at least 1".into()));
    }
    let taxonomy = Arc::new(match &config.taxonomy {
        Some(p) => Taxonomy::from_path(p)?,
        None => Taxonomy::example(),
    });
    let model = load_checkpoint(&taxonomy, &config.checkpoint)?;
    let detector: Arc<dyn Detector> = match &config.detector_fixture {
        Some(p) => Arc::new(StubDetector::from_path(p)?),
        None => Arc::new(NullDetector),
    };
    let keywords = match &config.keywords {
        Some(p) => KeywordTable::from_path(p, &taxonomy)?,
        None => KeywordTable::from_category_names(&taxonomy),
    };
    let index = InvertedIndex::load(&config.index, taxonomy.clone())?;
    let engine = Engine::new(taxonomy, model, detector, keywords)?;
    if index.config().feature_dim != engine.feature_dim() {
        return Err(Error::dims("index feature width", engine.feature_dim(), index.config().feature_dim));
    }
    Ok(AppState::new(Arc::new(engine), index, config.default_k, config.default_weights))
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> crate::Result<()> {
    let state = Arc::new(load_state(&config)?);
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!(
        "listening on {} with {} items",
        listener.local_addr()?,
        state.index().len()
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
