//! Minimal JSON-over-HTTP translation service.
//!
//! `POST /translate` takes `{"text": [..], "beam": n?, "alpha": x?}` and
//! answers `{"translations": [..]}` in input order. `GET /health` echoes
//! the loaded configuration.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use nmt_core::Translator;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub const DEFAULT_MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    /// Most sentences accepted in one request.
    pub max_batch: usize,
    /// Requests translated at the same time.
    pub workers: usize,
    /// Reported by `/health`.
    pub model_name: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_batch: DEFAULT_MAX_BATCH,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            model_name: "model".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslateRequest {
    pub text: Vec<String>,
    pub beam: Option<usize>,
    pub alpha: Option<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RequestError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("batch of {got} sentences exceeds the limit of {max}")]
    TooLarge { got: usize, max: usize },
}

impl RequestError {
    pub fn status(&self) -> StatusCode {
        match self {
            RequestError::Malformed(_) => StatusCode::BAD_REQUEST,
            RequestError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        }
    }
}

/// Parses and validates a `/translate` body.
pub fn parse_request(body: &[u8], max_batch: usize) -> Result<TranslateRequest, RequestError> {
    let bad = |m: &str| RequestError::Malformed(m.to_string());
    let v: Value = serde_json::from_slice(body).map_err(|e| RequestError::Malformed(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| bad("body must be a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "text" | "beam" | "alpha")) {
        return Err(RequestError::Malformed(format!("unknown field {k:?}")));
    }
    let text = obj
        .get("text")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("\"text\" must be an array of strings"))?
        .iter()
        .map(|s| s.as_str().map(str::to_owned).ok_or_else(|| bad("\"text\" must be an array of strings")))
        .collect::<Result<Vec<_>, _>>()?;
    if text.len() > max_batch {
        return Err(RequestError::TooLarge {
            got: text.len(),
            max: max_batch,
        });
    }
    let beam = match obj.get("beam") {
        None | Some(Value::Null) => None,
        Some(b) => match b.as_u64() {
            Some(n) if n >= 1 => Some(usize::try_from(n).map_err(|_| bad("\"beam\" is too large"))?),
            _ => return Err(bad("\"beam\" must be a positive integer")),
        },
    };
    let alpha = match obj.get("alpha") {
        None | Some(Value::Null) => None,
        Some(a) => match a.as_f64() {
            Some(x) if x >= 0.0 && x.is_finite() => Some(x),
            _ => return Err(bad("\"alpha\" must be a non-negative number")),
        },
    };
    Ok(TranslateRequest { text, beam, alpha })
}

struct AppState {
    translator: Arc<Translator>,
    cfg: ServerConfig,
    workers: Semaphore,
}

fn json_response(status: StatusCode, body: Value) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
}

async fn health(State(st): State<Arc<AppState>>) -> Response {
    json_response(
        StatusCode::OK,
        json!({"status": "ok", "model": st.cfg.model_name, "beam": st.translator.config().beam_size}),
    )
}

async fn translate(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let req = match parse_request(&body, st.cfg.max_batch) {
        Ok(r) => r,
        Err(e) => return json_response(e.status(), json!({"error": e.to_string()})),
    };
    let Ok(_permit) = st.workers.acquire().await else {
        return json_response(StatusCode::SERVICE_UNAVAILABLE, json!({"error": "shutting down"}));
    };
    let tr = Arc::clone(&st.translator);
    let job = tokio::task::spawn_blocking(move || tr.translate_batch(&req.text, req.beam, req.alpha, 1)).await;
    match job {
        Ok(Ok(out)) => json_response(StatusCode::OK, json!({ "translations": out })),
        Ok(Err(e)) if e.is_data_error() => json_response(StatusCode::BAD_REQUEST, json!({"error": e.to_string()})),
        Ok(Err(e)) => {
            log::error!("translation failed: {e}");
            json_response(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": e.to_string()}))
        }
        Err(e) => {
            log::error!("translation worker failed: {e}");
            json_response(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal failure"}))
        }
    }
}

pub fn router(translator: Arc<Translator>, cfg: ServerConfig) -> Router {
    let workers = Semaphore::new(cfg.workers.max(1));
    let state = Arc::new(AppState {
        translator,
        cfg,
        workers,
    });
    Router::new()
        .route("/translate", post(translate))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, translator: Arc<Translator>, cfg: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(translator, cfg)).await
}
