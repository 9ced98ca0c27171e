//! HTTP/JSON service over the enhancement engine.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/health` | | `Health` |
//! | POST | `/v1/weights/init` | `InitRequest` | `WeightsBlob` |
//! | POST | `/v1/weights/inspect` | `WeightsBlob` | `InspectReport` |
//! | POST | `/v1/weights/quantize` | `QuantizeRequest` | `WeightsBlob` |
//! | POST | `/v1/models` | `WeightsBlob` | `ModelInfo` |
//! | GET | `/v1/models` | | `[ModelInfo]` |
//! | DELETE | `/v1/models/{id}` | | 204 |
//! | POST | `/v1/models/{id}/enhance` | `EnhanceRequest` | `EnhanceResponse` |
//! | POST | `/v1/models/{id}/bench` | `BenchRequest` | `RtfReport` |
//! | POST | `/v1/models/{id}/streams` | `OpenStreamRequest` | `StreamInfo` |
//! | POST | `/v1/streams/{id}/frames` | `FrameRequest` | `FrameResponse` |
//! | DELETE | `/v1/streams/{id}` | | 204 |
//! | POST | `/v1/gradcheck` | `GradcheckRequest` | `GradcheckReport` |
//!
//! Failures reply with `ErrorBody { kind, message }`.

mod error;
mod ops;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use trunet_api::*;
use trunet_core::{Network, StreamState};
use uuid::Uuid;

pub use error::{ApiError, ApiJson, ApiResult};

/// Request bodies carry whole WAV and weight files.
pub const BODY_LIMIT: usize = 512 << 20;

struct Model {
    info: ModelInfo,
    network: Arc<Network>,
}

struct Stream {
    network: Arc<Network>,
    state: Mutex<StreamState>,
}

#[derive(Default)]
pub struct AppState {
    models: Mutex<HashMap<String, Model>>,
    streams: Mutex<HashMap<String, Arc<Stream>>>,
}

type Shared = Arc<AppState>;

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/weights/init", post(init_weights))
        .route("/v1/weights/inspect", post(inspect))
        .route("/v1/weights/quantize", post(quantize))
        .route("/v1/models", post(load_model).get(list_models))
        .route("/v1/models/{id}", delete(drop_model))
        .route("/v1/models/{id}/enhance", post(enhance))
        .route("/v1/models/{id}/bench", post(bench))
        .route("/v1/models/{id}/streams", post(open_stream))
        .route("/v1/streams/{id}/frames", post(push_frame))
        .route("/v1/streams/{id}", delete(close_stream))
        .route("/v1/gradcheck", post(gradcheck))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, ErrorKind::Usage, "no such endpoint") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(Shared::default())
}

/// Serve on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Bind `addr` and serve in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(local)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn init_weights(ApiJson(req): ApiJson<InitRequest>) -> ApiResult<WeightsBlob> {
    blocking(move || ops::init_weights(&req)).await.map(Json)
}

async fn inspect(ApiJson(req): ApiJson<WeightsBlob>) -> ApiResult<InspectReport> {
    blocking(move || ops::inspect(&req.weights.0)).await.map(Json)
}

async fn quantize(ApiJson(req): ApiJson<QuantizeRequest>) -> ApiResult<WeightsBlob> {
    blocking(move || ops::quantize(&req)).await.map(Json)
}

async fn load_model(State(st): State<Shared>, ApiJson(req): ApiJson<WeightsBlob>) -> Result<(StatusCode, Json<ModelInfo>), ApiError> {
    let (network, parameters, quantized) = blocking(move || ops::load_network(&req.weights.0)).await?;
    let info = ModelInfo {
        id: Uuid::new_v4().to_string(),
        quantized,
        parameters,
    };
    st.models.lock().unwrap().insert(
        info.id.clone(),
        Model {
            info: info.clone(),
            network: Arc::new(network),
        },
    );
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_models(State(st): State<Shared>) -> Json<Vec<ModelInfo>> {
    Json(st.models.lock().unwrap().values().map(|m| m.info.clone()).collect())
}

async fn drop_model(State(st): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match st.models.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found("model", &id)),
    }
}

fn model(st: &AppState, id: &str) -> Result<Arc<Network>, ApiError> {
    st.models
        .lock()
        .unwrap()
        .get(id)
        .map(|m| m.network.clone())
        .ok_or_else(|| ApiError::not_found("model", id))
}

async fn enhance(State(st): State<Shared>, Path(id): Path<String>, ApiJson(req): ApiJson<EnhanceRequest>) -> ApiResult<EnhanceResponse> {
    let net = model(&st, &id)?;
    blocking(move || ops::enhance(&net, &req)).await.map(Json)
}

async fn bench(State(st): State<Shared>, Path(id): Path<String>, ApiJson(req): ApiJson<BenchRequest>) -> ApiResult<RtfReport> {
    let net = model(&st, &id)?;
    blocking(move || ops::bench(&net, &req)).await.map(Json)
}

async fn open_stream(
    State(st): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<OpenStreamRequest>,
) -> Result<(StatusCode, Json<StreamInfo>), ApiError> {
    let network = model(&st, &id)?;
    let sampler = ops::sampler(&req.sign)?;
    let state = StreamState::new(&network, sampler);
    let info = StreamInfo {
        id: Uuid::new_v4().to_string(),
        model: id,
        hop_size: state.hop_size(),
        latency_samples: state.latency(),
    };
    st.streams.lock().unwrap().insert(
        info.id.clone(),
        Arc::new(Stream {
            network,
            state: Mutex::new(state),
        }),
    );
    Ok((StatusCode::CREATED, Json(info)))
}

async fn push_frame(State(st): State<Shared>, Path(id): Path<String>, ApiJson(req): ApiJson<FrameRequest>) -> ApiResult<FrameResponse> {
    let stream = st
        .streams
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("stream", &id))?;
    blocking(move || {
        let mut state = stream.state.lock().unwrap();
        let out = state.process_frame(&stream.network, &req.samples).map_err(|e| ApiError::usage(e.to_string()))?;
        Ok(FrameResponse {
            frame_index: state.frame_index(),
            direct: out.direct,
            reverb: out.reverb,
            noise: out.noise,
        })
    })
    .await
    .map(Json)
}

async fn close_stream(State(st): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match st.streams.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found("stream", &id)),
    }
}

async fn gradcheck(ApiJson(req): ApiJson<GradcheckRequest>) -> ApiResult<GradcheckReport> {
    blocking(move || ops::gradcheck(&req)).await.map(Json)
}
