//! HTTP clients for live model services. Each capability posts JSON to its
//! own endpoint; boxes travel as unit-square `[x, y, w, h]` arrays.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    derive_image_id, require_non_empty, BackendError, ChatClient, Detection, DetectionList,
    Detector, Editor, Generator, ImagePayload, ImageRef, Provenance,
};
use crate::boxmodel::{assign_occurrences, BoundingBox};
use crate::embedding::{EmbedError, Embedder, EmbeddingVector};
use crate::suggest::EditPrompt;

/// Request and response bodies.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ChatRequest {
        pub model: String,
        pub system: String,
        pub user: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ChatResponse {
        pub text: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct DetectRequest {
        /// Base64 PNG.
        pub image: String,
        pub labels: Vec<String>,
        pub threshold: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireDetection {
        pub label: String,
        #[serde(rename = "box")]
        pub bbox: [f64; 4],
        pub score: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct DetectResponse {
        pub detections: Vec<WireDetection>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GenerateRequest {
        pub prompt: String,
        pub size: u32,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ImageResponse {
        /// Base64 PNG.
        pub image: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireBox {
        /// `name #k`
        pub label: String,
        #[serde(rename = "box")]
        pub bbox: [f64; 4],
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EditRequest {
        pub image: String,
        pub boxes: Vec<WireBox>,
        pub instruction: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub model: String,
        pub text: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub embedding: Vec<f64>,
    }
}

/// Where and how to reach one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Resolved from the environment, never from the config file body.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: String::new(),
            api_key: None,
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone)]
struct Http {
    endpoint: Endpoint,
    client: reqwest::blocking::Client,
}

impl Http {
    fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(Self { endpoint, client })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut req = self.client.post(&self.endpoint.url).json(body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Rejected(format!(
                "HTTP {status}: {}",
                body.trim()
            )));
        }
        resp.json()
            .map_err(|e| BackendError::Rejected(format!("malformed response: {e}")))
    }
}

fn decode_image(b64: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(b64.trim())
        .map_err(|e| BackendError::Rejected(format!("image is not base64: {e}")))
}

fn encoded_payload(image: &ImageRef) -> Result<String, BackendError> {
    image
        .bytes()
        .map(|b| B64.encode(b))
        .ok_or_else(|| BackendError::ImageNotFound(format!("{} has no encoded image", image.id)))
}

fn bytes_image(bytes: Vec<u8>, provenance: Provenance) -> ImageRef {
    let id = derive_image_id("img", &[&bytes]);
    ImageRef {
        id,
        payload: ImagePayload::Bytes(bytes),
        provenance,
    }
}

#[derive(Debug, Clone)]
pub struct RemoteChat(Http);

impl RemoteChat {
    pub fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        Ok(Self(Http::new(endpoint)?))
    }
}

impl ChatClient for RemoteChat {
    fn id(&self) -> &str {
        &self.0.endpoint.model
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, BackendError> {
        require_non_empty("system text", system)?;
        require_non_empty("user text", user)?;
        let resp: wire::ChatResponse = self.0.post(&wire::ChatRequest {
            model: self.0.endpoint.model.clone(),
            system: system.into(),
            user: user.into(),
        })?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    http: Http,
    size: u32,
}

impl RemoteGenerator {
    pub fn new(endpoint: Endpoint, size: u32) -> Result<Self, BackendError> {
        Ok(Self {
            http: Http::new(endpoint)?,
            size,
        })
    }
}

impl Generator for RemoteGenerator {
    fn id(&self) -> &str {
        &self.http.endpoint.model
    }

    fn generate(&self, prompt: &str) -> Result<ImageRef, BackendError> {
        require_non_empty("generation prompt", prompt)?;
        let resp: wire::ImageResponse = self.http.post(&wire::GenerateRequest {
            prompt: prompt.into(),
            size: self.size,
        })?;
        Ok(bytes_image(
            decode_image(&resp.image)?,
            Provenance {
                parent: None,
                round: 0,
                prompt: prompt.into(),
                backend: self.id().into(),
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteDetector {
    http: Http,
    threshold: f64,
}

impl RemoteDetector {
    pub fn new(endpoint: Endpoint, threshold: f64) -> Result<Self, BackendError> {
        Ok(Self {
            http: Http::new(endpoint)?,
            threshold,
        })
    }
}

/// Clamps a wire box into the unit square; degenerate results are dropped.
fn clamp_box([x, y, w, h]: [f64; 4]) -> Option<BoundingBox> {
    let x0 = x.clamp(0.0, 1.0);
    let y0 = y.clamp(0.0, 1.0);
    let w = ((x + w).min(1.0) - x0).max(0.0);
    let h = ((y + h).min(1.0) - y0).max(0.0);
    BoundingBox::new(x0, y0, w, h).ok()
}

impl Detector for RemoteDetector {
    fn id(&self) -> &str {
        &self.http.endpoint.model
    }

    fn detect(
        &self,
        image: &ImageRef,
        vocabulary: &[String],
    ) -> Result<DetectionList, BackendError> {
        if vocabulary.is_empty() {
            return Err(BackendError::InvalidRequest(
                "vocabulary must be non-empty".into(),
            ));
        }
        let resp: wire::DetectResponse = self.http.post(&wire::DetectRequest {
            image: encoded_payload(image)?,
            labels: vocabulary.to_vec(),
            threshold: self.threshold,
        })?;
        let kept: Vec<(String, BoundingBox, f64)> = resp
            .detections
            .into_iter()
            .filter(|d| d.score >= self.threshold && d.score <= 1.0)
            .filter_map(|d| clamp_box(d.bbox).map(|b| (d.label, b, d.score)))
            .collect();
        let objects = assign_occurrences(kept.iter().map(|(l, b, _)| (l.as_str(), *b)));
        Ok(DetectionList {
            detections: objects
                .iter()
                .zip(&kept)
                .map(|(o, (_, _, score))| Detection {
                    object: o.clone(),
                    score: *score,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEditor(Http);

impl RemoteEditor {
    pub fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        Ok(Self(Http::new(endpoint)?))
    }
}

impl Editor for RemoteEditor {
    fn id(&self) -> &str {
        &self.0.endpoint.model
    }

    fn edit(
        &self,
        image: &ImageRef,
        prompt: &EditPrompt,
        round: u32,
    ) -> Result<ImageRef, BackendError> {
        let resp: wire::ImageResponse = self.0.post(&wire::EditRequest {
            image: encoded_payload(image)?,
            boxes: prompt
                .grounded_boxes
                .iter()
                .map(|o| wire::WireBox {
                    label: o.tag(),
                    bbox: o.bbox.as_array(),
                })
                .collect(),
            instruction: prompt.instruction.clone(),
        })?;
        Ok(bytes_image(
            decode_image(&resp.image)?,
            Provenance {
                parent: Some(image.id.clone()),
                round,
                prompt: prompt.instruction.clone(),
                backend: self.id().into(),
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder(Http);

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        Ok(Self(Http::new(endpoint)?))
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.0.endpoint.model
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let resp: wire::EmbedResponse = self
            .0
            .post(&wire::EmbedRequest {
                model: self.0.endpoint.model.clone(),
                text: text.into(),
            })
            .map_err(|e| match e {
                BackendError::Unreachable(m) => EmbedError::Unreachable(m),
                other => EmbedError::BadResponse(other.to_string()),
            })?;
        EmbeddingVector::normalized(resp.embedding)
    }
}
