//! HTTP service behind the annotation tool.
//!
//! | route                          | method    | body                         |
//! |--------------------------------|-----------|------------------------------|
//! | `/`                            | GET       | annotation tool page         |
//! | `/api/images`                  | GET       | `[{id, width, height}]`      |
//! | `/api/images/{id}`             | GET       | image bytes                  |
//! | `/api/annotations/{image_id}`  | GET, POST | annotation document          |
//! | `/api/timing`                  | GET       | per-kind timing summary      |
//!
//! Image ids are file names inside the image directory. A document for
//! `lot.jpg` is stored as `lot.json` in the annotation directory. Schema
//! violations answer 422 with `{"error", "path"}`.
//!
//! Writes to one document are serialized by a per-file lock and land
//! through write-temp-rename, so readers see either the old or the new file.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use parkspot_core::dataset::{parse_pklot_xml, read_annotation_json, write_annotation_json};
use parkspot_core::{timing_summary, AnnotationDocument, AnnotationKind, Error};
use serde::Serialize;
use serde_json::json;

use crate::commands::{read_documents, write_atomic};

pub const DEFAULT_PORT: u16 = 8714;
pub const BIND_ENV: &str = "PARKSPOT_BIND";

const INDEX_HTML: &str = include_str!("../ui/index.html");
const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "ppm"];

#[derive(Debug)]
struct Inner {
    images: PathBuf,
    annotations: PathBuf,
    locks: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// `annotations` defaults to the image directory.
    pub fn new(images: &Path, annotations: Option<&Path>) -> parkspot_core::Result<Self> {
        if !images.is_dir() {
            return Err(Error::Format("image directory does not exist".into()).in_file(images));
        }
        let annotations = annotations.unwrap_or(images).to_owned();
        std::fs::create_dir_all(&annotations).map_err(|e| Error::from(e).in_file(&annotations))?;
        Ok(AppState(Arc::new(Inner {
            images: images.to_owned(),
            annotations,
            locks: Mutex::new(HashMap::new()),
        })))
    }

    fn lock_for(&self, path: &Path) -> Arc<Mutex<()>> {
        let mut locks = self.0.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(path.to_owned()).or_default().clone()
    }

    fn image_path(&self, id: &str) -> Option<PathBuf> {
        let valid = !id.is_empty()
            && !id.starts_with('.')
            && !id.contains(['/', '\\'])
            && is_image(Path::new(id));
        let path = self.0.images.join(id);
        (valid && path.is_file()).then_some(path)
    }

    fn document_path(&self, id: &str) -> PathBuf {
        self.0.annotations.join(Path::new(id).with_extension("json"))
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

enum ApiError {
    NotFound(String),
    Schema { error: String, path: String },
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, Json(json!({ "error": what }))).into_response(),
            ApiError::Schema { error, path } => {
                (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": error, "path": path }))).into_response()
            }
            ApiError::Internal(e) => {
                log::error!("{e}");
                (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e }))).into_response()
            }
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Schema { path, message } => ApiError::Schema {
                error: message.clone(),
                path: path.clone(),
            },
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::Internal(format!("worker failed: {e}"))))
}

pub fn list_images(dir: &Path) -> parkspot_core::Result<Vec<ImageInfo>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::from(e).in_file(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| !n.starts_with('.') && is_image(Path::new(n)))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|id| {
            let path = dir.join(&id);
            let (width, height) = image::image_dimensions(&path)
                .map_err(|e| Error::Format(format!("unreadable image: {e}")).in_file(&path))?;
            Ok(ImageInfo { id, width, height })
        })
        .collect()
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn images(State(state): State<AppState>) -> Result<Json<Vec<ImageInfo>>, ApiError> {
    blocking(move || Ok(list_images(&state.0.images)?)).await.map(Json)
}

async fn image(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = state.image_path(&id).ok_or_else(|| ApiError::NotFound(format!("no image {id:?}")))?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| ApiError::Internal(e.to_string()))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("ppm") => "image/x-portable-pixmap",
        _ => "image/jpeg",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// A stored JSON document, or the PKLot XML ground truth next to the image
/// presented as a polygon document.
fn load_document(state: &AppState, id: &str) -> Result<AnnotationDocument, ApiError> {
    let image = state.image_path(id).ok_or_else(|| ApiError::NotFound(format!("no image {id:?}")))?;
    let json_path = state.document_path(id);
    if let Ok(bytes) = std::fs::read(&json_path) {
        return read_annotation_json(&bytes).map_err(|e| ApiError::Internal(e.in_file(&json_path).to_string()));
    }
    let xml = image.with_extension("xml");
    match std::fs::read(&xml) {
        Ok(bytes) => Ok(AnnotationDocument {
            image: id.to_owned(),
            kind: AnnotationKind::Polygon,
            side: None,
            spaces: parse_pklot_xml(&bytes).map_err(|e| ApiError::Internal(e.in_file(&xml).to_string()))?,
        }),
        Err(_) => Err(ApiError::NotFound(format!("no annotations for {id:?}"))),
    }
}

async fn get_annotations(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let doc = blocking(move || load_document(&state, &id)).await?;
    let bytes = write_annotation_json(&doc)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn post_annotations(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    state.image_path(&id).ok_or_else(|| ApiError::NotFound(format!("no image {id:?}")))?;
    let doc = read_annotation_json(&body)?;
    if doc.image != id {
        return Err(ApiError::Schema {
            error: format!("document is for {:?}, posted to {id:?}", doc.image),
            path: "image".into(),
        });
    }
    let bytes = write_annotation_json(&doc)?;
    let path = state.document_path(&id);
    let stored = bytes.clone();
    blocking(move || {
        let lock = state.lock_for(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        write_atomic(&path, &stored).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn timing(State(state): State<AppState>) -> Result<Response, ApiError> {
    let summary = blocking(move || Ok(timing_summary(&read_documents(&state.0.annotations)?))).await?;
    Ok(Json(summary).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/images", get(images))
        .route("/api/images/{id}", get(image))
        .route("/api/annotations/{image_id}", get(get_annotations).post(post_annotations))
        .route("/api/timing", get(timing))
        .with_state(state)
}

/// Accepts `host:port`, a bare host (default port) or a bare port
/// (loopback).
pub fn parse_bind(s: &str) -> Result<SocketAddr, String> {
    if let Ok(addr) = s.parse::<SocketAddr>() {
        return Ok(addr);
    }
    if let Ok(port) = s.parse::<u16>() {
        return Ok(SocketAddr::from(([127, 0, 0, 1], port)));
    }
    if let Ok(ip) = s.trim_matches(['[', ']']).parse::<std::net::IpAddr>() {
        return Ok(SocketAddr::new(ip, DEFAULT_PORT));
    }
    Err(format!("invalid bind address {s:?}; expected host:port, host or port"))
}

/// Binds before serving so a taken port fails at startup.
pub async fn bind(addr: SocketAddr) -> parkspot_core::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot listen on {addr}: {e}"))))
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> parkspot_core::Result<()> {
    axum::serve(listener, router(state)).await.map_err(Error::Io)
}
