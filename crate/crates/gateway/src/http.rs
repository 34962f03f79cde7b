//! HTTP/JSON routes. Every failure body is one [`ApiError`].

use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cnnlab_core::datastore::SplitSpec;
use cnnlab_core::jobs::{self, ApiError, ClassifierSpec, ErrorCode, JobSpec};
use cnnlab_core::netspec::SolverConfig;
use cnnlab_core::shapecheck::Shape4;
use cnnlab_core::taskhub::{Hub, HubError};
use cnnlab_core::workspace::Workspace;

/// Longest a notifications request blocks.
pub const MAX_LONG_POLL: Duration = Duration::from_secs(25);

#[derive(Clone)]
pub struct AppState {
    pub ws: Arc<Workspace>,
    pub hub: Arc<Hub>,
}

/// [`ApiError`] as an HTTP response.
pub struct Failure(pub ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl From<HubError> for Failure {
    fn from(e: HubError) -> Self {
        let code = match e {
            HubError::UnknownTask(_) => ErrorCode::NotFound,
            HubError::Store(_) => ErrorCode::Internal,
        };
        Failure(ApiError::new(code, e.to_string()))
    }
}

pub fn status_of(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (status_of(self.0.code), Json(self.0)).into_response()
    }
}

type Reply<T> = Result<T, Failure>;

/// JSON body whose rejections become `bad_request` errors.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = Failure;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(Failure(ApiError::bad_request(rejection_text(&e)))),
        }
    }
}

fn rejection_text(e: &JsonRejection) -> String {
    format!("invalid request body: {}", e.body_text())
}

/// Query string whose rejections become `bad_request` errors.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = Failure;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        match axum::extract::Query::<T>::from_request_parts(parts, state).await {
            Ok(q) => Ok(Params(q.0)),
            Err(e) => Err(Failure(ApiError::bad_request(query_text(&e)))),
        }
    }
}

fn query_text(e: &QueryRejection) -> String {
    format!("invalid query: {}", e.body_text())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/import", post(import_dataset))
        .route("/datasets/{id}/split", post(split_dataset))
        .route("/nets/validate", post(validate_net))
        .route("/nets/complete", post(complete_net))
        .route("/nets/{id}/deploy", post(deploy_net))
        .route("/train", post(start_training))
        .route("/experiments/extract", post(start_extract))
        .route("/experiments/test", post(start_test))
        .route("/features/{id}/export", post(start_export))
        .route("/features/{id}/grid", get(feature_grid))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/cancel", post(cancel_task))
        .route("/notifications", get(notifications))
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .fallback(|| async { Failure(ApiError::new(ErrorCode::NotFound, "no such endpoint")) })
        .method_not_allowed_fallback(|| async {
            Failure(ApiError::bad_request("method not allowed for this endpoint"))
        })
        .with_state(state)
}

/// Runs blocking workspace or model work off the async threads.
async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure(ApiError::new(ErrorCode::Internal, format!("worker failed: {e}"))))?
        .map_err(Failure)
}

async fn submit(st: AppState, spec: JobSpec) -> Reply<(StatusCode, Json<serde_json::Value>)> {
    let rec = blocking(move || jobs::submit(&st.hub, Arc::clone(&st.ws), spec)).await?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::to_value(rec).expect("record serializes"))))
}

async fn list_datasets(State(st): State<AppState>) -> Reply<Json<serde_json::Value>> {
    let list = blocking(move || Ok(st.ws.datasets()?)).await?;
    Ok(Json(json!(list)))
}

#[derive(Deserialize)]
struct ImportRequest {
    path: String,
    #[serde(default)]
    format: Option<String>,
}

async fn import_dataset(State(st): State<AppState>, Body(req): Body<ImportRequest>) -> impl IntoResponse {
    submit(st, JobSpec::Import { path: req.path, format: req.format }).await
}

async fn split_dataset(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Body(spec): Body<SplitSpec>,
) -> Reply<Json<jobs::SplitResult>> {
    Ok(Json(blocking(move || jobs::split_dataset(&st.ws, &id, &spec)).await?))
}

#[derive(Deserialize)]
struct ValidateRequest {
    text: String,
    #[serde(default)]
    input: Option<Shape4>,
}

async fn validate_net(
    State(st): State<AppState>,
    Body(req): Body<ValidateRequest>,
) -> Reply<Json<jobs::ValidateReport>> {
    Ok(Json(blocking(move || jobs::validate_net(Some(&st.ws), &req.text, req.input)).await?))
}

#[derive(Deserialize)]
struct CompleteRequest {
    text: String,
    line: u32,
    column: u32,
}

#[derive(Serialize)]
struct CompleteResponse {
    suggestions: Vec<String>,
}

async fn complete_net(Body(req): Body<CompleteRequest>) -> Json<CompleteResponse> {
    Json(CompleteResponse { suggestions: jobs::complete(&req.text, req.line, req.column) })
}

async fn deploy_net(State(st): State<AppState>, Path(id): Path<String>) -> Reply<Json<jobs::DeployResult>> {
    Ok(Json(blocking(move || jobs::deploy(&st.ws, &id)).await?))
}

#[derive(Deserialize)]
struct TrainRequest {
    #[serde(default)]
    net_id: Option<String>,
    #[serde(default)]
    net_text: Option<String>,
    #[serde(default)]
    solver: Option<SolverConfig>,
    #[serde(default)]
    solver_text: Option<String>,
    dataset_id: String,
}

async fn start_training(State(st): State<AppState>, Body(r): Body<TrainRequest>) -> impl IntoResponse {
    let spec = JobSpec::Train {
        net_id: r.net_id,
        net_text: r.net_text,
        solver: r.solver,
        solver_text: r.solver_text,
        dataset_id: r.dataset_id,
    };
    submit(st, spec).await
}

#[derive(Deserialize)]
struct ExtractRequest {
    model_id: String,
    dataset_id: String,
    layers: Vec<String>,
}

async fn start_extract(State(st): State<AppState>, Body(r): Body<ExtractRequest>) -> impl IntoResponse {
    submit(st, JobSpec::Extract { model_id: r.model_id, dataset_id: r.dataset_id, layers: r.layers }).await
}

#[derive(Deserialize)]
struct TestRequest {
    model_id: String,
    dataset_id: String,
    #[serde(default)]
    classifier: Option<ClassifierSpec>,
}

async fn start_test(State(st): State<AppState>, Body(r): Body<TestRequest>) -> impl IntoResponse {
    submit(st, JobSpec::Test { model_id: r.model_id, dataset_id: r.dataset_id, classifier: r.classifier }).await
}

#[derive(Deserialize)]
struct ExportRequest {
    path: String,
}

async fn start_export(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Body(r): Body<ExportRequest>,
) -> impl IntoResponse {
    submit(st, JobSpec::Export { features_id: id, path: r.path }).await
}

#[derive(Deserialize)]
struct GridQuery {
    #[serde(default)]
    sample: usize,
}

async fn feature_grid(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Params(q): Params<GridQuery>,
) -> Reply<Json<cnnlab_core::experiment::Grid>> {
    Ok(Json(blocking(move || jobs::grid(&st.ws, &id, q.sample)).await?))
}

async fn list_tasks(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!(st.hub.list()))
}

async fn get_task(State(st): State<AppState>, Path(id): Path<String>) -> Reply<Json<serde_json::Value>> {
    let rec = st.hub.get(&id).ok_or(HubError::UnknownTask(id))?;
    Ok(Json(json!(rec)))
}

async fn cancel_task(State(st): State<AppState>, Path(id): Path<String>) -> Reply<Json<serde_json::Value>> {
    let acknowledged = st.hub.cancel(&id)?;
    Ok(Json(json!({ "acknowledged": acknowledged, "task": st.hub.get(&id) })))
}

#[derive(Deserialize)]
struct FeedQuery {
    #[serde(default)]
    after: u64,
    /// Seconds to wait for new events, capped at the long-poll limit.
    #[serde(default)]
    wait: Option<f64>,
}

async fn notifications(State(st): State<AppState>, Params(q): Params<FeedQuery>) -> Reply<Json<serde_json::Value>> {
    let wait = match q.wait {
        Some(w) if w.is_nan() || w < 0.0 => return Err(Failure(ApiError::bad_request("wait must be ≥ 0"))),
        Some(w) => Duration::from_secs_f64(w.min(MAX_LONG_POLL.as_secs_f64())),
        None => MAX_LONG_POLL,
    };
    let page = blocking(move || Ok(st.hub.wait_feed(q.after, wait))).await?;
    Ok(Json(json!(page)))
}

async fn list_models(State(st): State<AppState>) -> Reply<Json<serde_json::Value>> {
    let list = blocking(move || Ok(st.ws.models()?)).await?;
    Ok(Json(json!(list)))
}

async fn get_model(State(st): State<AppState>, Path(id): Path<String>) -> Reply<Json<serde_json::Value>> {
    let summary = blocking(move || Ok(st.ws.model_summary(&id)?)).await?;
    Ok(Json(json!(summary)))
}

/// Serves `state` on `addr` until Ctrl-C.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
