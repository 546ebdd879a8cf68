//! Stateless JSON service over one loaded model.
//!
//! `GET /health`, `GET /model`, `POST /predict`, `POST /explain`. Clients send
//! raw feature values; the server preprocesses them.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CamError, Result};
use crate::explainer::{self, ExplainConfig, ExplanationStep};
use crate::pipeline::CamModel;
use crate::qaf::Polarity;
use crate::reasoner::{self, StrengthAssignment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub strengths: BTreeMap<String, f64>,
    pub score: f64,
}

/// Raw record keyed by column name, values as JSON scalars.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub features: HashMap<String, Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub features: HashMap<String, Value>,
    pub node: String,
}

fn cell(v: &Value) -> Result<String> {
    match v {
        Value::Null => Ok(String::new()),
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(_) | Value::Array(_) | Value::Object(_) => {
            Err(CamError::Misaligned(format!("feature value {v} is not a scalar")))
        }
    }
}

fn record_of(features: &HashMap<String, Value>) -> Result<HashMap<String, String>> {
    features.iter().map(|(k, v)| Ok((k.clone(), cell(v)?))).collect()
}

/// Preprocesses and evaluates a named raw record. Returns the strengths and
/// the record in column order.
pub fn evaluate_record(cam: &CamModel, record: &HashMap<String, String>) -> Result<(StrengthAssignment, Vec<String>)> {
    let x = cam.preprocess.apply_named(record)?;
    let ordered = cam
        .preprocess
        .column_names()
        .iter()
        .map(|c| record[c].clone())
        .collect();
    Ok((reasoner::evaluate(&cam.qaf, &x)?, ordered))
}

pub fn predict_record(cam: &CamModel, record: &HashMap<String, String>) -> Result<Prediction> {
    let (s, _) = evaluate_record(cam, record)?;
    Ok(Prediction {
        score: s.get(cam.qaf.root())?,
        strengths: s.strengths,
    })
}

pub fn explain_record(
    cam: &CamModel,
    record: &HashMap<String, String>,
    node: &str,
    config: &ExplainConfig,
) -> Result<ExplanationStep> {
    let subject = explainer::resolve_node(&cam.qaf, node)?;
    let (s, raw) = evaluate_record(cam, record)?;
    explainer::explain(&cam.qaf, &s, subject, Some(&raw), config)
}

/// The model document plus each node's polarity towards the root
/// (`null` for the root and for nodes cut off by a pruned edge).
pub fn model_view(cam: &CamModel) -> Result<Value> {
    let mut doc = serde_json::to_value(&cam.qaf)?;
    let polarity: BTreeMap<&str, Option<&str>> = cam
        .qaf
        .nodes()
        .iter()
        .map(|n| {
            let p = cam.qaf.root_polarity(&n.id).ok().map(|p| match p {
                Polarity::Support => "support",
                Polarity::Attack => "attack",
            });
            (n.id.as_str(), p)
        })
        .collect();
    doc["root_polarity"] = serde_json::to_value(polarity)?;
    Ok(doc)
}

struct AppState {
    cam: CamModel,
    explain: ExplainConfig,
    model_view: Value,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "malformed-body",
            message,
        }
    }
}

impl From<CamError> for ApiError {
    fn from(e: CamError) -> Self {
        let status = match &e {
            CamError::NodeNotFound(_) => StatusCode::NOT_FOUND,
            CamError::Misaligned(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    let text = std::str::from_utf8(body).map_err(|e| ApiError::bad_request(format!("body is not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn model(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(app.model_view.clone())
}

async fn predict(State(app): State<Arc<AppState>>, body: Bytes) -> std::result::Result<Json<Prediction>, ApiError> {
    let req: PredictRequest = parse(&body)?;
    Ok(Json(predict_record(&app.cam, &record_of(&req.features)?)?))
}

async fn explain(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> std::result::Result<Json<ExplanationStep>, ApiError> {
    let req: ExplainRequest = parse(&body)?;
    Ok(Json(explain_record(&app.cam, &record_of(&req.features)?, &req.node, &app.explain)?))
}

/// Routes over an immutable snapshot of `cam`. Refuses invalid models.
pub fn router(cam: CamModel, explain_config: ExplainConfig) -> Result<Router> {
    let report = cam.qaf.validate();
    if !report.is_valid() {
        return Err(CamError::InvalidModel(format!("{:?}", report.violations)));
    }
    let state = Arc::new(AppState {
        model_view: model_view(&cam)?,
        cam,
        explain: explain_config,
    });
    Ok(Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .with_state(state))
}

/// Serves until ctrl-c.
pub async fn serve(cam: CamModel, explain_config: ExplainConfig, addr: std::net::SocketAddr) -> Result<()> {
    let app = router(cam, explain_config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CamError::io(addr.to_string(), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CamError::io(addr.to_string(), e))
}
