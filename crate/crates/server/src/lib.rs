//! HTTP service for app-card predictions.
//!
//! Endpoints:
//! - `GET /v1/predict?q=` ranks products for a full query.
//! - `GET /v1/autocomplete?q=` runs the same model on a raw prefix.
//! - `POST /v1/feedback` appends a click line to the behavioral log.
//! - `GET /healthz` reports checkpoint hashes and catalog size.
//!
//! The model is immutable after load. The feedback log is the only mutable
//! resource and every append is fsynced before the response is sent.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prodintent::bundle::{BundleInfo, Card};
use prodintent::{ModelBundle, ModelPaths};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub const ENV_ADDR: &str = "PRODINTENT_ADDR";
pub const ENV_CONFIG: &str = "PRODINTENT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_addr")]
    pub addr: String,
    #[serde(flatten)]
    pub model: ModelPaths,
    pub feedback_log: PathBuf,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Autocomplete threshold; falls back to `tau`.
    #[serde(default)]
    pub tau_ac: Option<f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_min_prefix_len")]
    pub min_prefix_len: usize,
}

fn default_addr() -> String {
    "127.0.0.1:8080".into()
}
fn default_tau() -> f64 {
    0.5
}
fn default_top_k() -> usize {
    3
}
fn default_min_prefix_len() -> usize {
    2
}

impl ServerConfig {
    pub fn new(model: ModelPaths, feedback_log: impl Into<PathBuf>) -> Self {
        ServerConfig {
            addr: default_addr(),
            model,
            feedback_log: feedback_log.into(),
            tau: default_tau(),
            tau_ac: None,
            top_k: default_top_k(),
            min_prefix_len: default_min_prefix_len(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        Ok(prodintent::io::read_json(path)?)
    }

    /// Applies `PRODINTENT_ADDR` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(addr) = std::env::var(ENV_ADDR) {
            self.addr = addr;
        }
        self
    }

    pub fn autocomplete_threshold(&self) -> f64 {
        self.tau_ac.unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<(), ServeError> {
        let unit = |t: f64| t > 0.0 && t < 1.0;
        if !unit(self.tau) || !unit(self.autocomplete_threshold()) {
            return Err(ServeError::Config("thresholds must lie in (0, 1)".into()));
        }
        if self.autocomplete_threshold() < self.tau {
            return Err(ServeError::Config("tau_ac must be >= tau".into()));
        }
        if self.top_k == 0 {
            return Err(ServeError::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ServeError {
    Model(prodintent::Error),
    Io(std::io::Error),
    Config(String),
}

impl fmt::Display for ServeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServeError::Model(e) => write!(f, "{e}"),
            ServeError::Io(e) => write!(f, "io: {e}"),
            ServeError::Config(m) => write!(f, "config: {m}"),
        }
    }
}

impl std::error::Error for ServeError {}

impl From<prodintent::Error> for ServeError {
    fn from(e: prodintent::Error) -> Self {
        ServeError::Model(e)
    }
}

impl From<std::io::Error> for ServeError {
    fn from(e: std::io::Error) -> Self {
        ServeError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppCardResponse {
    pub query: String,
    pub cards: Vec<Card>,
    pub triggered: bool,
    pub latency_micros: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Search,
    Autocomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub query: String,
    pub product_id: String,
    pub surface: Surface,
    /// Unix seconds; the server fills it in when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

/// One feedback line: a click event the ingest stage reads directly.
#[derive(Debug, Serialize)]
struct FeedbackLine<'a> {
    query: &'a str,
    document_id: String,
    product_id: &'a str,
    count: u64,
    surface: Surface,
    timestamp: u64,
}

pub struct AppState {
    pub bundle: ModelBundle,
    pub config: ServerConfig,
    feedback: Mutex<File>,
}

impl AppState {
    pub fn load(config: ServerConfig) -> Result<Self, ServeError> {
        config.validate()?;
        let bundle = ModelBundle::load(&config.model)?;
        if let Some(parent) = config.feedback_log.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let feedback = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.feedback_log)?;
        Ok(AppState {
            bundle,
            config,
            feedback: Mutex::new(feedback),
        })
    }

    fn cards(&self, query: &str, threshold: f64) -> AppCardResponse {
        let start = Instant::now();
        let cards = self.bundle.predict(query, threshold, self.config.top_k);
        AppCardResponse {
            query: query.to_string(),
            triggered: !cards.is_empty(),
            cards,
            latency_micros: start.elapsed().as_micros() as u64,
        }
    }

    fn append_feedback(&self, ev: &FeedbackEvent) -> std::io::Result<()> {
        let timestamp = ev.timestamp.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        let line = FeedbackLine {
            query: &ev.query,
            document_id: format!("feedback:{}", ev.product_id),
            product_id: &ev.product_id,
            count: 1,
            surface: ev.surface,
            timestamp,
        };
        let mut bytes = serde_json::to_vec(&line).expect("feedback serializes");
        bytes.push(b'\n');
        let mut file = self.feedback.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&bytes)?;
        file.sync_data()
    }
}

#[derive(Debug, Deserialize)]
struct QueryParams {
    q: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn predict(State(state): State<Arc<AppState>>, Query(params): Query<QueryParams>) -> Response {
    let q = params.q.unwrap_or_default();
    if q.trim().is_empty() {
        return bad_request("missing or empty query parameter q");
    }
    Json(state.cards(&q, state.config.tau)).into_response()
}

async fn autocomplete(State(state): State<Arc<AppState>>, Query(params): Query<QueryParams>) -> Response {
    let q = params.q.unwrap_or_default();
    if q.trim().chars().count() < state.config.min_prefix_len {
        return Json(AppCardResponse {
            query: q,
            cards: Vec::new(),
            triggered: false,
            latency_micros: 0,
        })
        .into_response();
    }
    Json(state.cards(&q, state.config.autocomplete_threshold())).into_response()
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    body: Result<Json<FeedbackEvent>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(ev) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    if ev.query.trim().is_empty() {
        return bad_request("empty query");
    }
    if !state.bundle.catalog.contains(&ev.product_id) {
        return bad_request(format!("unknown product {:?}", ev.product_id));
    }
    let writer = state.clone();
    match tokio::task::spawn_blocking(move || writer.append_feedback(&ev)).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => {
            log::error!("feedback append failed: {e}");
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(ErrorBody { error: e.to_string() }),
            )
                .into_response()
        }
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(ErrorBody { error: e.to_string() }),
        )
            .into_response(),
    }
}

#[derive(Debug, Serialize)]
struct Health<'a> {
    status: &'static str,
    #[serde(flatten)]
    info: &'a BundleInfo,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    Json(Health {
        status: "ok",
        info: &state.bundle.info,
    })
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/predict", get(predict))
        .route("/v1/autocomplete", get(autocomplete))
        .route("/v1/feedback", post(feedback))
        .route("/healthz", get(healthz))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

/// Loads the model, binds `config.addr`, prints `listening on ADDR` and
/// serves until Ctrl-C.
pub fn run(config: ServerConfig) -> Result<(), ServeError> {
    let state = Arc::new(AppState::load(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&state.config.addr).await?;
        let addr: SocketAddr = listener.local_addr()?;
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        log::info!("serving {} products", state.bundle.info.catalog_size);
        serve_on(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}
