//! HTTP routes. Bodies are JSON; images and other assets are fetched by URI.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use styleweave::imageio::{decode_image_png, decode_mask_png};
use uuid::Uuid;

use crate::assets::{AssetKind, AssetUri};
use crate::error::{Result, StudioError};
use crate::pipeline::{
    BlendRequest, FinetuneRequest, InvertRequest, JobRequest, PanoramaRequest, RenderRequest,
    SampleRequest, TransferApiRequest,
};
use crate::Studio;

type Shared = State<Arc<Studio>>;

pub struct ApiError(StudioError);

impl From<StudioError> for ApiError {
    fn from(e: StudioError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": self.0.to_string(), "status": status.as_u16() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    Ok(serde_json::from_slice(body)?)
}

/// Runs pipeline work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| StudioError::Internal(e.to_string()))?
}

pub fn router(studio: Arc<Studio>) -> Router {
    Router::new()
        .route("/v1/project", get(project))
        .route("/v1/sample", post(sample))
        .route("/v1/render", post(render))
        .route("/v1/blend", post(blend))
        .route("/v1/invert", post(invert))
        .route("/v1/panorama", post(panorama))
        .route("/v1/transfer", post(transfer))
        .route("/v1/finetune", post(finetune))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/assets/{*uri}", get(asset))
        .route("/v1/uploads/{kind}", post(upload))
        .with_state(studio)
}

async fn project(State(s): Shared) -> Json<crate::project::Manifest> {
    Json(s.project().manifest().clone())
}

async fn sync_call<Req, Resp>(
    s: Arc<Studio>,
    body: Bytes,
    f: fn(&Studio, &Req) -> Result<Resp>,
) -> ApiResult<Json<Resp>>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = parse(&body)?;
    Ok(Json(blocking(move || f(&s, &req)).await?))
}

async fn sample(State(s): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    sync_call(s, body, |s, r: &SampleRequest| s.sample(r)).await
}

async fn render(State(s): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    sync_call(s, body, |s, r: &RenderRequest| s.render(r)).await
}

async fn submit(s: Arc<Studio>, req: JobRequest) -> ApiResult<Response> {
    let job = blocking(move || s.submit(&req)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn blend(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    submit(s, JobRequest::Blend(parse::<BlendRequest>(&body)?)).await
}

async fn invert(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    submit(s, JobRequest::Invert(parse::<InvertRequest>(&body)?)).await
}

async fn panorama(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    submit(s, JobRequest::Panorama(parse::<PanoramaRequest>(&body)?)).await
}

async fn transfer(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    submit(s, JobRequest::Transfer(parse::<TransferApiRequest>(&body)?)).await
}

async fn finetune(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    submit(s, JobRequest::Finetune(parse::<FinetuneRequest>(&body)?)).await
}

async fn job(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<crate::Job>> {
    let id = Uuid::parse_str(&id).map_err(|_| StudioError::NotFound(format!("job {id}")))?;
    Ok(Json(blocking(move || s.job(id)).await?))
}

async fn asset(State(s): Shared, Path(uri): Path<String>) -> ApiResult<Response> {
    let parsed =
        AssetUri::parse(&uri).map_err(|_| StudioError::NotFound(format!("asset {uri}")))?;
    let kind = parsed.kind;
    let bytes = blocking(move || s.project().assets().get(&parsed)).await?;
    Ok(([(header::CONTENT_TYPE, kind.content_type())], bytes).into_response())
}

/// Stores a PNG image or mask sent as the raw request body.
async fn upload(State(s): Shared, Path(kind): Path<String>, body: Bytes) -> ApiResult<Response> {
    let kind = match kind.as_str() {
        "images" => AssetKind::Images,
        "masks" => AssetKind::Masks,
        other => return Err(StudioError::NotFound(format!("upload kind `{other}`")).into()),
    };
    let uri = blocking(move || {
        let decoded = match kind {
            AssetKind::Masks => decode_mask_png(&body).map(drop),
            _ => decode_image_png(&body).map(drop),
        };
        decoded.map_err(|e| StudioError::bad(format!("upload is not a readable PNG: {e}")))?;
        s.project().assets().put(kind, &body)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "uri": uri.to_string() })),
    )
        .into_response())
}
