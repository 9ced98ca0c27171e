//! Async client for the trunet HTTP/JSON service.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use trunet_api::*;

pub use trunet_api as api;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{}", .body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("unexpected reply from {url} (HTTP {status}): {detail}")]
    Protocol { url: String, status: StatusCode, detail: String },
}

impl ClientError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api { body, .. } => body.kind,
            _ => ErrorKind::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8750`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize + ?Sized, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.http.request(method, &url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        let protocol = |detail: String| ClientError::Protocol {
            url: url.clone(),
            status,
            detail,
        };
        if !status.is_success() {
            let body = serde_json_from(&bytes).map_err(protocol)?;
            return Err(ClientError::Api { status, body });
        }
        if status == StatusCode::NO_CONTENT {
            return serde_json_from(b"null").map_err(protocol);
        }
        serde_json_from(&bytes).map_err(protocol)
    }

    pub async fn health(&self) -> Result<Health> {
        self.call::<(), _>(Method::GET, "/health", None).await
    }

    pub async fn init_weights(&self, seed: u64, without_fgru: bool) -> Result<Vec<u8>> {
        let r: WeightsBlob = self
            .call(Method::POST, "/v1/weights/init", Some(&InitRequest { seed, without_fgru }))
            .await?;
        Ok(r.weights.0)
    }

    pub async fn inspect(&self, weights: Vec<u8>) -> Result<InspectReport> {
        self.call(Method::POST, "/v1/weights/inspect", Some(&WeightsBlob { weights: Blob(weights) }))
            .await
    }

    pub async fn quantize(&self, weights: Vec<u8>, calibration: Vec<Vec<u8>>) -> Result<Vec<u8>> {
        let req = QuantizeRequest {
            weights: Blob(weights),
            calibration: calibration.into_iter().map(Blob).collect(),
        };
        let r: WeightsBlob = self.call(Method::POST, "/v1/weights/quantize", Some(&req)).await?;
        Ok(r.weights.0)
    }

    pub async fn load_model(&self, weights: Vec<u8>) -> Result<ModelInfo> {
        self.call(Method::POST, "/v1/models", Some(&WeightsBlob { weights: Blob(weights) }))
            .await
    }

    pub async fn models(&self) -> Result<Vec<ModelInfo>> {
        self.call::<(), _>(Method::GET, "/v1/models", None).await
    }

    pub async fn drop_model(&self, id: &str) -> Result<()> {
        self.call::<(), ()>(Method::DELETE, &format!("/v1/models/{id}"), None).await
    }

    pub async fn enhance(&self, model: &str, req: &EnhanceRequest) -> Result<EnhanceResponse> {
        self.call(Method::POST, &format!("/v1/models/{model}/enhance"), Some(req)).await
    }

    pub async fn bench(&self, model: &str, req: &BenchRequest) -> Result<RtfReport> {
        self.call(Method::POST, &format!("/v1/models/{model}/bench"), Some(req)).await
    }

    pub async fn open_stream(&self, model: &str, sign: SignOptions) -> Result<StreamInfo> {
        self.call(Method::POST, &format!("/v1/models/{model}/streams"), Some(&OpenStreamRequest { sign }))
            .await
    }

    pub async fn push_frame(&self, stream: &str, samples: Vec<f64>) -> Result<FrameResponse> {
        self.call(Method::POST, &format!("/v1/streams/{stream}/frames"), Some(&FrameRequest { samples }))
            .await
    }

    pub async fn close_stream(&self, stream: &str) -> Result<()> {
        self.call::<(), ()>(Method::DELETE, &format!("/v1/streams/{stream}"), None).await
    }

    pub async fn gradcheck(&self, trials: usize, seed: u64) -> Result<GradcheckReport> {
        self.call(Method::POST, "/v1/gradcheck", Some(&GradcheckRequest { trials, seed }))
            .await
    }
}

fn serde_json_from<T: DeserializeOwned>(bytes: &[u8]) -> std::result::Result<T, String> {
    serde_json::from_slice(bytes).map_err(|e| {
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(200)]).into_owned();
        format!("{e}; body: {text}")
    })
}
