//! HTTP front end for [`CarrierServer`].

use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contactpsi::api::{codes, ErrorBody, HeatmapQuery, PsiRequest, UploadRequest};
use contactpsi::server::{CarrierServer, ServerError};
use tokio::net::TcpListener;

/// Large enough for a maximal exchange of 2048-bit elements.
pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

struct ApiError(StatusCode, ErrorBody);

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError(status, e.body())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        let (status, code) = if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            (StatusCode::PAYLOAD_TOO_LARGE, codes::TOO_MANY_ELEMENTS)
        } else {
            (StatusCode::BAD_REQUEST, codes::BAD_REQUEST)
        };
        ApiError(
            status,
            ErrorBody {
                code: code.into(),
                message: e.body_text(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Shared = State<Arc<CarrierServer>>;

async fn params(State(s): Shared, Path(region): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.params(&region)?).into_response())
}

async fn upload(
    State(s): Shared,
    Path(region): Path<String>,
    body: Result<Json<UploadRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let out = tokio::task::spawn_blocking(move || s.ingest_upload(&region, &req))
        .await
        .map_err(|e| ServerError::Storage(std::io::Error::other(e)))??;
    Ok(Json(out).into_response())
}

async fn psi(
    State(s): Shared,
    Path(region): Path<String>,
    body: Result<Json<PsiRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let out = tokio::task::spawn_blocking(move || s.psi_exchange(&region, &req))
        .await
        .map_err(|e| ServerError::Storage(std::io::Error::other(e)))??;
    Ok(Json(out).into_response())
}

async fn flatfile(State(s): Shared, Path(region): Path<String>) -> Result<Response, ApiError> {
    let text = s.flatfile_export(&region)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn heatmap(
    State(s): Shared,
    Path(region): Path<String>,
    Query(q): Query<HeatmapQuery>,
) -> Result<Response, ApiError> {
    Ok(Json(s.heatmap(&region, &q)?).into_response())
}

pub fn router(server: Arc<CarrierServer>) -> Router {
    Router::new()
        .route("/v1/region/{region}/params", get(params))
        .route("/v1/region/{region}/carrier/upload", post(upload))
        .route("/v1/region/{region}/psi", post(psi))
        .route("/v1/region/{region}/flatfile", get(flatfile))
        .route("/v1/region/{region}/heatmap", get(heatmap))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(server)
}

/// Serve until interrupted, purging expired data every `purge_every`.
pub async fn run(server: Arc<CarrierServer>, listener: TcpListener, purge_every: Duration) -> std::io::Result<()> {
    let purger = Arc::clone(&server);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(purge_every);
        tick.tick().await;
        loop {
            tick.tick().await;
            let s = Arc::clone(&purger);
            match tokio::task::spawn_blocking(move || s.purge_job()).await {
                Ok(Ok(n)) => tracing::info!(removed = n, "retention purge"),
                Ok(Err(e)) => tracing::error!(error = %e, "retention purge failed"),
                Err(e) => tracing::error!(error = %e, "retention purge panicked"),
            }
        }
    });
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(server))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
