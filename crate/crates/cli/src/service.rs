//! Read-only HTTP façade over a loaded index and model.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::Context;
use arc_swap::ArcSwap;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gramdex::ingest::{decode_image_bytes, read_manifest};
use gramdex::{index, BarcodeIndex, Error, LayerCombo, VggPrefixModel};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::commands::QueryDocument;
use crate::engine::{check_combo, run_query, SharedModel};

pub const MAX_N: usize = 100;
const BODY_LIMIT: usize = 32 * 1024 * 1024;

/// Index plus the id → file map, swapped as one unit.
pub struct Snapshot {
    pub index: BarcodeIndex,
    pub files: HashMap<String, PathBuf>,
}

impl Snapshot {
    pub fn load(index_path: &Path, manifest_path: &Path) -> anyhow::Result<Self> {
        let index = index::load(index_path)
            .with_context(|| format!("loading index {}", index_path.display()))?;
        let manifest = read_manifest(manifest_path)
            .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
        let files = manifest.entries.into_iter().map(|e| (e.id, e.path)).collect();
        Ok(Snapshot { index, files })
    }
}

pub struct ServiceState {
    model: SharedModel,
    snapshot: ArcSwap<Snapshot>,
    default_n: usize,
    next_query: AtomicU64,
}

impl ServiceState {
    pub fn new(model: VggPrefixModel, snapshot: Snapshot, default_n: usize) -> Self {
        ServiceState {
            model: Arc::new(model),
            snapshot: ArcSwap::from_pointee(snapshot),
            default_n,
            next_query: AtomicU64::new(1),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.load_full()
    }

    /// Atomically replaces the index snapshot; in-flight queries keep the old one.
    pub fn replace(&self, snapshot: Snapshot) {
        self.snapshot.store(Arc::new(snapshot));
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => StatusCode::CONFLICT,
            Error::Input(_) | Error::Decode { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        (self.status, Json(Body { error: self.message })).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryParams {
    n: Option<usize>,
    combo: Option<String>,
}

async fn query(
    State(state): State<Arc<ServiceState>>,
    Query(params): Query<QueryParams>,
    mut multipart: Multipart,
) -> Result<Json<QueryDocument>, ApiError> {
    let n = params.n.unwrap_or(state.default_n);
    if !(1..=MAX_N).contains(&n) {
        return Err(ApiError::bad_request(format!("n must be within 1..={MAX_N}, got {n}")));
    }
    let snapshot = state.snapshot();
    if let Some(raw) = params.combo.as_deref().filter(|s| !s.is_empty()) {
        let combo: LayerCombo = raw
            .parse()
            .map_err(|e: Error| ApiError::bad_request(e.to_string()))?;
        check_combo(&snapshot.index, Some(&combo))?;
    }

    let mut bytes = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
    {
        if field.name() == Some("image") {
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            bytes = Some(data);
            break;
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    let image = decode_image_bytes(&bytes)
        .map_err(|reason| ApiError::bad_request(format!("undecodable image: {reason}")))?;

    let query_id = format!("q{}", state.next_query.fetch_add(1, Ordering::Relaxed));
    let model = Arc::clone(&state.model);
    let worker_snapshot = Arc::clone(&snapshot);
    let answer = tokio::task::spawn_blocking(move || run_query(&model, &worker_snapshot.index, &image, n))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(QueryDocument::new(query_id, n, snapshot.index.combo(), &answer, true)))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InfoDocument {
    pub record_count: usize,
    pub bit_len: usize,
    pub combo: String,
    pub labels: BTreeMap<String, usize>,
}

async fn info(State(state): State<Arc<ServiceState>>) -> Json<InfoDocument> {
    let snapshot = state.snapshot();
    let idx = &snapshot.index;
    Json(InfoDocument {
        record_count: idx.len(),
        bit_len: idx.bit_len(),
        combo: idx.combo().to_string(),
        labels: idx.label_counts(),
    })
}

fn content_type(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("tif" | "tiff") => "image/tiff",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// Ids are resolved only through the manifest, so no request path ever
/// reaches the filesystem directly.
async fn image(
    State(state): State<Arc<ServiceState>>,
    axum::extract::Path(id): axum::extract::Path<String>,
) -> Response {
    let Some(path) = state.snapshot().files.get(&id).cloned() else {
        return ApiError::new(StatusCode::NOT_FOUND, format!("unknown id {id:?}")).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display()))
            .into_response(),
    }
}

pub fn router(state: Arc<ServiceState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/query", post(query))
        .route("/api/info", get(info))
        .route("/api/image/*id", get(image))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub struct ServeOptions {
    pub bind: SocketAddr,
    pub index_path: PathBuf,
    pub manifest_path: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub default_n: usize,
}

/// Serves until interrupted. On unix, SIGHUP reloads the index and manifest.
pub async fn serve(model: VggPrefixModel, opts: ServeOptions) -> anyhow::Result<()> {
    let snapshot = Snapshot::load(&opts.index_path, &opts.manifest_path)?;
    let state = Arc::new(ServiceState::new(model, snapshot, opts.default_n));
    let app = router(Arc::clone(&state), opts.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(opts.bind)
        .await
        .with_context(|| format!("binding {}", opts.bind))?;
    eprintln!("listening on http://{}", listener.local_addr()?);

    #[cfg(unix)]
    {
        let state = Arc::clone(&state);
        let (index_path, manifest_path) = (opts.index_path.clone(), opts.manifest_path.clone());
        let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
        tokio::spawn(async move {
            while hup.recv().await.is_some() {
                let (i, m) = (index_path.clone(), manifest_path.clone());
                match tokio::task::spawn_blocking(move || Snapshot::load(&i, &m)).await {
                    Ok(Ok(s)) => {
                        eprintln!("reloaded index: {} records", s.index.len());
                        state.replace(s);
                    }
                    Ok(Err(e)) => eprintln!("reload failed, keeping current index: {e:#}"),
                    Err(e) => eprintln!("reload failed: {e}"),
                }
            }
        });
    }

    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")
}
