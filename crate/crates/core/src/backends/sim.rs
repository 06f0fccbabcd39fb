//! Deterministic stand-ins for the neural services. Every simulated image
//! carries a [`SceneState`]; generation looks scenes up in a fixture table,
//! detection reads them back, and editing applies plans to them exactly.

use std::collections::HashMap;
use std::sync::Arc;

use super::{
    derive_image_id, require_non_empty, BackendError, ChatClient, Detection, DetectionList,
    Detector, Editor, Generator, ImagePayload, ImageRef, Provenance, SceneState,
};
use crate::assets::PromptAssets;
use crate::boxmodel::{parse_object_list, serialize_object_list, ObjectList, SceneObject};
use crate::corpus::PoemRecord;
use crate::elements::KeyElementSet;
use crate::suggest::{rule_based_suggest, EditOp, EditPrompt, SuggestConfig};
use crate::text::{fnv1a64, normalize_label};

fn scene_image(id_parts: &[&[u8]], scene: SceneState, provenance: Provenance) -> ImageRef {
    let text = serialize_object_list(&scene.objects);
    let mut parts = id_parts.to_vec();
    parts.push(text.as_bytes());
    parts.push(scene.style_tag.as_bytes());
    ImageRef {
        id: derive_image_id("sim", &parts),
        payload: ImagePayload::Scene(scene),
        provenance,
    }
}

/// What [`SimGenerator`] does with a prompt that has no fixture.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum UnknownPrompt {
    #[default]
    EmptyScene,
    Scene(SceneState),
    Reject,
}

/// Generator whose output scene is looked up by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct SimGenerator {
    scenes: HashMap<u64, SceneState>,
    on_unknown: UnknownPrompt,
}

impl SimGenerator {
    pub const ID: &'static str = "sim-generator";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, scene: SceneState) {
        self.scenes.insert(fnv1a64(prompt.as_bytes()), scene);
    }

    pub fn with_scene(mut self, prompt: &str, scene: SceneState) -> Self {
        self.insert(prompt, scene);
        self
    }

    /// Registers the same initial scene for a record's translation and its
    /// original text, so both generation modes start from the same picture.
    pub fn insert_record(&mut self, record: &PoemRecord, scene: SceneState) {
        self.insert(&record.translation, scene.clone());
        self.insert(&record.poem, scene);
    }

    pub fn on_unknown(mut self, behaviour: UnknownPrompt) -> Self {
        self.on_unknown = behaviour;
        self
    }
}

impl Generator for SimGenerator {
    fn id(&self) -> &str {
        Self::ID
    }

    fn generate(&self, prompt: &str) -> Result<ImageRef, BackendError> {
        require_non_empty("generation prompt", prompt)?;
        let scene = match (
            self.scenes.get(&fnv1a64(prompt.as_bytes())),
            &self.on_unknown,
        ) {
            (Some(s), _) => s.clone(),
            (None, UnknownPrompt::EmptyScene) => SceneState::new(ObjectList::empty()),
            (None, UnknownPrompt::Scene(s)) => s.clone(),
            (None, UnknownPrompt::Reject) => {
                return Err(BackendError::Rejected(
                    "no scene fixture for this prompt".into(),
                ))
            }
        };
        Ok(scene_image(
            &[prompt.as_bytes()],
            scene,
            Provenance {
                parent: None,
                round: 0,
                prompt: prompt.to_string(),
                backend: Self::ID.into(),
            },
        ))
    }
}

/// Detector that reports every scene object whose name is in the
/// vocabulary, with score 1.0. A per-label miss probability drops labels
/// deterministically from (seed, label, image id).
#[derive(Debug, Clone, Default)]
pub struct SimDetector {
    seed: u64,
    default_miss: f64,
    miss: HashMap<String, f64>,
}

impl SimDetector {
    pub const ID: &'static str = "sim-detector";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_miss(mut self, label: &str, probability: f64) -> Self {
        self.miss
            .insert(normalize_label(label), probability.clamp(0.0, 1.0));
        self
    }

    pub fn with_default_miss(mut self, probability: f64) -> Self {
        self.default_miss = probability.clamp(0.0, 1.0);
        self
    }

    fn missed(&self, label: &str, image_id: &str) -> bool {
        let p = self.miss.get(label).copied().unwrap_or(self.default_miss);
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let mut buf = self.seed.to_le_bytes().to_vec();
        buf.extend_from_slice(label.as_bytes());
        buf.push(0);
        buf.extend_from_slice(image_id.as_bytes());
        let u = (fnv1a64(&buf) >> 11) as f64 / (1u64 << 53) as f64;
        u < p
    }
}

impl Detector for SimDetector {
    fn id(&self) -> &str {
        Self::ID
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
        let scene = image.scene().ok_or_else(|| {
            BackendError::ImageNotFound(format!("{} carries no simulated scene", image.id))
        })?;
        let vocab: Vec<String> = vocabulary.iter().map(|l| normalize_label(l)).collect();
        let detections = scene
            .objects
            .iter()
            .filter(|o| vocab.contains(&o.name) && !self.missed(&o.name, &image.id))
            .map(|o| Detection {
                object: o.clone(),
                score: 1.0,
            })
            .collect();
        Ok(DetectionList { detections })
    }
}

/// Editor that applies plan ops to the scene exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimEditor;

impl SimEditor {
    pub const ID: &'static str = "sim-editor";
}

/// Applies `ops` to a scene and restores occurrence numbering.
pub fn apply_ops(scene: &ObjectList, ops: &[EditOp]) -> Result<ObjectList, BackendError> {
    let mut objects: Vec<SceneObject> = scene.objects().to_vec();
    let find = |objects: &[SceneObject], s: &SceneObject| {
        objects
            .iter()
            .position(|o| o.key() == s.key())
            .ok_or_else(|| BackendError::UnknownSubject {
                name: s.name.clone(),
                occurrence: s.occurrence,
            })
    };
    // resolve every subject against the unedited scene first
    let mut slots = Vec::with_capacity(ops.len());
    for op in ops {
        slots.push(match op.subject() {
            Some(s) => Some(find(&objects, s)?),
            None => None,
        });
    }
    let mut removed = vec![false; objects.len()];
    let mut added = Vec::new();
    for (op, slot) in ops.iter().zip(slots) {
        match op {
            EditOp::Retain { .. } => {}
            EditOp::Remove { .. } => removed[slot.expect("resolved")] = true,
            EditOp::Move { target, .. } => objects[slot.expect("resolved")].bbox = target.bbox,
            EditOp::Replace { target, .. } => objects[slot.expect("resolved")] = target.clone(),
            EditOp::Add { target } => added.push(target.clone()),
        }
    }
    let mut out: Vec<SceneObject> = objects
        .into_iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(o, _)| o)
        .collect();
    out.extend(added);
    Ok(ObjectList::renumbered(out))
}

impl Editor for SimEditor {
    fn id(&self) -> &str {
        Self::ID
    }

    fn edit(
        &self,
        image: &ImageRef,
        prompt: &EditPrompt,
        round: u32,
    ) -> Result<ImageRef, BackendError> {
        let scene = image.scene().ok_or_else(|| {
            BackendError::ImageNotFound(format!("{} carries no simulated scene", image.id))
        })?;
        let objects = apply_ops(&scene.objects, &prompt.ops)?;
        let next = SceneState {
            objects,
            style_tag: scene.style_tag.clone(),
        };
        Ok(scene_image(
            &[
                image.id.as_bytes(),
                &round.to_le_bytes(),
                prompt.instruction.as_bytes(),
            ],
            next,
            Provenance {
                parent: Some(image.id.clone()),
                round,
                prompt: prompt.instruction.clone(),
                backend: Self::ID.into(),
            },
        ))
    }
}

/// Programmable answer for chat requests the script does not cover.
pub type ChatHook = Arc<dyn Fn(&str, &str) -> Option<String> + Send + Sync>;

/// Chat model answering from a table keyed by (hash(system), hash(user)),
/// then from hooks in registration order.
#[derive(Clone, Default)]
pub struct SimChat {
    scripted: HashMap<(u64, u64), String>,
    hooks: Vec<ChatHook>,
}

impl std::fmt::Debug for SimChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimChat")
            .field("scripted", &self.scripted.len())
            .field("hooks", &self.hooks.len())
            .finish()
    }
}

impl SimChat {
    pub const ID: &'static str = "sim-chat";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(mut self, system: &str, user: &str, answer: impl Into<String>) -> Self {
        self.scripted.insert(
            (fnv1a64(system.as_bytes()), fnv1a64(user.as_bytes())),
            answer.into(),
        );
        self
    }

    pub fn hook(mut self, hook: ChatHook) -> Self {
        self.hooks.push(hook);
        self
    }
}

impl ChatClient for SimChat {
    fn id(&self) -> &str {
        Self::ID
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, BackendError> {
        require_non_empty("system text", system)?;
        require_non_empty("user text", user)?;
        if let Some(a) = self
            .scripted
            .get(&(fnv1a64(system.as_bytes()), fnv1a64(user.as_bytes())))
        {
            return Ok(a.clone());
        }
        self.hooks
            .iter()
            .find_map(|h| h(system, user))
            .ok_or(BackendError::NoScriptedAnswer)
    }
}

/// Answers extractor requests with the record's manual elements, or with
/// `fallback` for records that have none. Records are matched by the
/// `Original sentence:` line of the request.
pub fn extractor_echo_hook(
    assets: &PromptAssets,
    records: &[PoemRecord],
    fallback: Vec<String>,
) -> ChatHook {
    let system = assets.extractor().to_string();
    let by_poem: HashMap<String, Option<Vec<String>>> = records
        .iter()
        .map(|r| (r.poem.clone(), r.manual_elements.clone()))
        .collect();
    Arc::new(move |sys, user| {
        if sys != system {
            return None;
        }
        let poem = user.lines().next()?.strip_prefix("Original sentence: ")?;
        let labels = match by_poem.get(poem) {
            Some(Some(m)) if !m.is_empty() => m.clone(),
            _ => fallback.clone(),
        };
        if labels.is_empty() {
            return Some("Reasoning: nothing concrete to draw.".into());
        }
        let set = KeyElementSet::from_labels(labels, "");
        Some(format!(
            "Reasoning: simulated extraction.\n{}",
            set.to_response_text()
        ))
    })
}

/// Parses `['a', 'b']` as written by the suggester prompt builder.
fn parse_label_list(text: &str) -> Option<Vec<String>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?;
    Some(
        inner
            .split(',')
            .map(|s| s.trim().trim_matches(|c| c == '\'' || c == '"').to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

/// Answers suggester requests by running the rule-based policy on the
/// request's element list and current objects.
pub fn suggester_rule_hook(assets: &PromptAssets, cfg: SuggestConfig) -> ChatHook {
    let system = assets.suggester().to_string();
    Arc::new(move |sys, user| {
        if sys != system {
            return None;
        }
        let mut labels = None;
        let mut current = None;
        for line in user.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("- Elements that must be included:") {
                labels = parse_label_list(rest);
            } else if let Some(rest) = line.strip_prefix("Current Objects:") {
                current = parse_object_list(rest.trim()).ok();
            }
        }
        let key = KeyElementSet::from_labels(labels?, "");
        let updated = rule_based_suggest(&current?, &key, &cfg);
        Some(format!(
            "Reasoning: kept matching objects, removed the rest, placed missing elements.\nUpdated Objects: {}",
            serialize_object_list(&updated)
        ))
    })
}
