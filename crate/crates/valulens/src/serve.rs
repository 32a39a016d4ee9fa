//! Local HTTP server for manifest curation. Reads run concurrently; every
//! mutation holds the write lock until the new manifest is on disk.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;
use valulens_core::{CategorySpec, Corpus, CorpusError, RivalCriterion};

use crate::error::Error;
use crate::manifest::{load_manifest, save_manifest};

pub const IMAGE_ROOT_ENV: &str = "VALULENS_IMAGE_ROOT";

const IMAGE_TYPES: &[(&str, &str)] = &[
    ("jpeg", "image/jpeg"),
    ("jpg", "image/jpeg"),
    ("png", "image/png"),
    ("gif", "image/gif"),
    ("webp", "image/webp"),
    ("bmp", "image/bmp"),
];

pub struct AppState {
    manifest_path: PathBuf,
    corpus: RwLock<Corpus>,
    image_root: Option<PathBuf>,
}

impl AppState {
    pub fn load(manifest_path: impl Into<PathBuf>, image_root: Option<PathBuf>) -> crate::Result<Self> {
        let manifest_path = manifest_path.into();
        let corpus = load_manifest(&manifest_path)?;
        Ok(AppState {
            manifest_path,
            corpus: RwLock::new(corpus),
            image_root,
        })
    }

    /// Image root from the argument, else from the environment.
    pub fn resolve_image_root(explicit: Option<PathBuf>) -> Option<PathBuf> {
        explicit.or_else(|| std::env::var_os(IMAGE_ROOT_ENV).map(PathBuf::from))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": {"kind": kind, "message": message.into()}}),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Corpus(CorpusError::UnknownCriterion(_) | CorpusError::UnknownCategory(_)) => {
                StatusCode::NOT_FOUND
            }
            Error::Validation(_) | Error::Corpus(CorpusError::Validation(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            body: e.to_json(),
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        Error::from(e).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "parse", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Progress {
    pub criterion_id: String,
    pub tagged: u64,
    pub total: u64,
    pub exception_fraction: f64,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/categories", get(list_categories))
        .route("/categories/{id}", get(get_category))
        .route("/criteria", get(list_criteria))
        .route("/criteria/{id}", get(get_criterion))
        .route("/criteria/{id}/exceptions", axum::routing::put(put_exceptions))
        .route("/criteria/{id}/rivals", axum::routing::put(put_rivals))
        .route("/images/{id}", get(get_image))
        .route("/progress/{id}", get(get_progress))
        .with_state(state)
}

/// Binds to `addr` and serves until the process is stopped.
pub async fn run(addr: SocketAddr, state: Arc<AppState>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn list_categories(State(state): State<Arc<AppState>>) -> Json<Vec<CategorySpec>> {
    Json(state.corpus.read().await.categories().to_vec())
}

async fn get_category(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<CategorySpec>> {
    let corpus = state.corpus.read().await;
    let category = corpus
        .category(&id)
        .ok_or(CorpusError::UnknownCategory(id))?;
    Ok(Json(category.clone()))
}

async fn list_criteria(State(state): State<Arc<AppState>>) -> Json<Vec<RivalCriterion>> {
    Json(state.corpus.read().await.criteria().to_vec())
}

async fn get_criterion(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<RivalCriterion>> {
    let corpus = state.corpus.read().await;
    let criterion = corpus
        .criterion(&id)
        .ok_or(CorpusError::UnknownCriterion(id))?;
    Ok(Json(criterion.clone()))
}

/// Applies `edit`, persists the result, then publishes it. On any failure
/// the in-memory corpus and the file are left as they were.
async fn mutate<F>(state: &AppState, id: &str, edit: F) -> ApiResult<Json<RivalCriterion>>
where
    F: FnOnce(&mut RivalCriterion),
{
    let mut corpus = state.corpus.write().await;
    let updated = corpus.update_criterion(id, edit)?;
    save_manifest(&state.manifest_path, &updated)?;
    *corpus = updated;
    let criterion = corpus.criterion(id).expect("criterion just updated");
    Ok(Json(criterion.clone()))
}

async fn put_exceptions(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Vec<String>>, JsonRejection>,
) -> ApiResult<Json<RivalCriterion>> {
    let Json(tagged) = body?;
    mutate(&state, &id, |c| {
        c.exception_count = tagged.len() as u64;
        c.exception_image_ids = tagged;
    })
    .await
}

async fn put_rivals(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Vec<String>>, JsonRejection>,
) -> ApiResult<Json<RivalCriterion>> {
    let Json(rivals) = body?;
    mutate(&state, &id, |c| c.rival_image_ids = rivals).await
}

async fn get_progress(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Progress>> {
    let corpus = state.corpus.read().await;
    let criterion = corpus
        .criterion(&id)
        .ok_or_else(|| CorpusError::UnknownCriterion(id.clone()))?;
    let total = corpus.owner(criterion).training_set_size;
    Ok(Json(Progress {
        criterion_id: id,
        tagged: criterion.exception_count,
        total,
        exception_fraction: criterion.exception_count as f64 / total as f64,
    }))
}

fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn content_type(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    IMAGE_TYPES
        .iter()
        .find(|(e, _)| *e == ext)
        .map(|(_, mime)| *mime)
}

/// The file for `id`: the id itself when it names an image file, else the
/// id with a known image extension appended.
fn find_image(root: &Path, id: &str) -> Option<(PathBuf, &'static str)> {
    let direct = root.join(id);
    if let Some(mime) = content_type(&direct) {
        if direct.is_file() {
            return Some((direct, mime));
        }
    }
    IMAGE_TYPES.iter().find_map(|(ext, mime)| {
        [ext.to_string(), ext.to_ascii_uppercase()]
            .into_iter()
            .map(|e| root.join(format!("{id}.{e}")))
            .find(|p| p.is_file())
            .map(|p| (p, *mime))
    })
}

async fn get_image(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    if !is_safe_id(&id) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_id",
            format!("invalid image id '{id}'"),
        ));
    }
    let root = state
        .image_root
        .as_deref()
        .ok_or_else(|| ApiError::not_found(format!("no image directory configured; set {IMAGE_ROOT_ENV}")))?;
    let (path, mime) =
        find_image(root, &id).ok_or_else(|| ApiError::not_found(format!("no image '{id}'")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::from(Error::io(&path, e)))?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
