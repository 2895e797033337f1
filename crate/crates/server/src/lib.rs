//! HTTP API over a shared [`Engine`].

use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dsrag_core::engine::{Engine, EngineError, GraphSummary, IndexSummary, Status};
use dsrag_core::eval::EvalSample;
use dsrag_core::ingest::{parse_document_with_id, InputFormat};
use dsrag_core::retriever::RetrievalMode;

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    token: Option<Arc<str>>,
}

/// An error response: `{"error": {"code", "message", "details"?}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError {
            status: StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            code: e.code(),
            message: e.to_string(),
            details: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({"code": self.code, "message": self.message});
        if let Some(d) = self.details {
            err["details"] = d;
        }
        (self.status, Json(json!({ "error": err }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, EngineError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: format!("worker failed: {e}"),
            details: None,
        }),
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    EngineError::Input(message.into()).into()
}

async fn post_document(State(s): State<AppState>, body: String) -> Result<impl IntoResponse, ApiError> {
    let summary = blocking(move || {
        let doc = parse_document_with_id(&body, InputFormat::JsonDocument, None)?;
        s.engine.ingest_documents(vec![doc])
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

#[derive(Serialize)]
struct BuildResponse {
    graph: GraphSummary,
    index: IndexSummary,
    status: Status,
}

async fn pipeline_build(State(s): State<AppState>) -> ApiResult<BuildResponse> {
    let r = blocking(move || {
        let graph = s.engine.build_graph()?;
        let index = s.engine.build_index()?;
        Ok(BuildResponse {
            graph,
            index,
            status: s.engine.status()?,
        })
    })
    .await?;
    Ok(Json(r))
}

async fn status(State(s): State<AppState>) -> ApiResult<Status> {
    Ok(Json(blocking(move || s.engine.status()).await?))
}

async fn create_session(State(s): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let session = blocking(move || s.engine.create_session()).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session.id }))))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = blocking(move || s.engine.session(&id)).await?;
    Ok(Json(serde_json::to_value(session).expect("session serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    question: String,
    #[serde(default)]
    mode: Option<String>,
}

fn parse_mode(m: Option<&str>) -> Result<RetrievalMode, ApiError> {
    match m {
        None => Ok(RetrievalMode::Full),
        Some(m) => m.parse().map_err(|_| bad_request(format!("unknown mode '{m}'"))),
    }
}

async fn query(State(s): State<AppState>, Path(id): Path<String>, body: Result<Json<QueryBody>, axum::extract::rejection::JsonRejection>) -> Result<Response, ApiError> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    let mode = parse_mode(body.mode.as_deref())?;
    let out = blocking(move || s.engine.query(&body.question, Some(&id), mode)).await?;
    let resp = out.response(true);
    if resp.failed {
        return Err(ApiError {
            status: StatusCode::BAD_GATEWAY,
            code: "provider",
            message: resp.answer.clone(),
            details: Some(serde_json::to_value(&resp).expect("response serializes")),
        });
    }
    Ok(Json(resp).into_response())
}

#[derive(Deserialize)]
struct ConceptQuery {
    root: Option<String>,
}

async fn concepts(State(s): State<AppState>, Query(q): Query<ConceptQuery>) -> Result<Json<Value>, ApiError> {
    let forest = blocking(move || s.engine.concepts(q.root.as_deref().filter(|r| !r.is_empty()))).await?;
    Ok(Json(json!({ "concepts": forest })))
}

async fn trace(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let t = blocking(move || s.engine.trace(&id)).await?;
    Ok(Json(serde_json::to_value(&*t).expect("trace serializes")))
}

async fn chunk(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let c = blocking(move || s.engine.chunk(&id)).await?;
    Ok(Json(serde_json::to_value(c).expect("chunk serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalBody {
    samples: Vec<EvalSample>,
    #[serde(default)]
    modes: Option<Vec<String>>,
}

async fn eval(State(s): State<AppState>, body: Result<Json<EvalBody>, axum::extract::rejection::JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    if body.samples.is_empty() {
        return Err(bad_request("samples must not be empty"));
    }
    let modes = match &body.modes {
        None => RetrievalMode::ALL.to_vec(),
        Some(ms) => ms.iter().map(|m| parse_mode(Some(m))).collect::<Result<_, _>>()?,
    };
    // Round-trip through the dataset parser for its id and emptiness checks.
    let jsonl: String = body
        .samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
        .collect();
    let samples = dsrag_core::eval::parse_dataset(&jsonl).map_err(|e| bad_request(e.to_string()))?;
    let report = blocking(move || s.engine.eval(&samples, &modes)).await?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
        details: None,
    }
}

async fn auth(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ApiError {
                status: StatusCode::UNAUTHORIZED,
                code: "unauthorized",
                message: "missing or invalid bearer token".into(),
                details: None,
            }
            .into_response();
        }
    }
    next.run(req).await
}

/// Builds the API router. With `token` set every request must carry
/// `Authorization: Bearer <token>`.
pub fn router(engine: Arc<Engine>, token: Option<String>) -> Router {
    let state = AppState {
        engine,
        token: token.map(Arc::from),
    };
    Router::new()
        .route("/documents", post(post_document))
        .route("/pipeline/build", post(pipeline_build))
        .route("/status", get(status))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/query", post(query))
        .route("/graph/concepts", get(concepts))
        .route("/graph/trace/:query_id", get(trace))
        .route("/chunks/*id", get(chunk))
        .route("/eval", post(eval))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, bind: &str, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
