//! Client interfaces for every external model, each with a remote (HTTP)
//! and a simulated implementation. The pipeline only sees the traits.

pub mod remote;
pub mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::{ObjectList, SceneObject};
use crate::suggest::EditPrompt;
use crate::text::fnv1a64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted answer for this chat request")]
    NoScriptedAnswer,
    #[error("edit references ({name:?}, #{occurrence}) which is not in the scene")]
    UnknownSubject { name: String, occurrence: u32 },
    #[error("image not found: {0}")]
    ImageNotFound(String),
}

/// Ground truth held by a simulated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: ObjectList,
    #[serde(default)]
    pub style_tag: String,
}

impl SceneState {
    pub fn new(objects: ObjectList) -> Self {
        Self {
            objects,
            style_tag: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagePayload {
    /// Encoded image from a live backend.
    Bytes(Vec<u8>),
    Scene(SceneState),
}

/// Where an image came from: the root generation or an edit of `parent`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub parent: Option<String>,
    pub round: u32,
    /// Generation prompt for roots, edit instruction otherwise.
    pub prompt: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub id: String,
    pub payload: ImagePayload,
    pub provenance: Provenance,
}

impl ImageRef {
    pub fn scene(&self) -> Option<&SceneState> {
        match &self.payload {
            ImagePayload::Scene(s) => Some(s),
            ImagePayload::Bytes(_) => None,
        }
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.payload {
            ImagePayload::Bytes(b) => Some(b),
            ImagePayload::Scene(_) => None,
        }
    }
}

/// Stable 16-hex-digit id for an image derived from its lineage and content.
pub(crate) fn derive_image_id(prefix: &str, parts: &[&[u8]]) -> String {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    format!("{prefix}-{:016x}", fnv1a64(&buf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object: SceneObject,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionList {
    pub detections: Vec<Detection>,
}

impl DetectionList {
    /// Detected objects with the 1..k occurrence invariant restored.
    pub fn to_object_list(&self) -> ObjectList {
        ObjectList::renumbered(self.detections.iter().map(|d| d.object.clone()).collect())
    }
}

pub trait ChatClient: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, system: &str, user: &str) -> Result<String, BackendError>;
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str) -> Result<ImageRef, BackendError>;
}

pub trait Detector: Send + Sync {
    fn id(&self) -> &str;
    fn detect(
        &self,
        image: &ImageRef,
        vocabulary: &[String],
    ) -> Result<DetectionList, BackendError>;
}

pub trait Editor: Send + Sync {
    fn id(&self) -> &str;
    /// Applies `prompt` to `image`, producing a child image tagged with `round`.
    fn edit(
        &self,
        image: &ImageRef,
        prompt: &EditPrompt,
        round: u32,
    ) -> Result<ImageRef, BackendError>;
}

pub(crate) fn require_non_empty(what: &str, text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidRequest(format!(
            "{what} must be non-empty"
        )));
    }
    Ok(())
}
