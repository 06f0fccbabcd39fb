//! Orchestration: retrieve the poem, extract its key elements, generate an
//! initial image from the translation, then detect, suggest, plan and edit
//! until the image holds every key element or the round limit is hit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::PromptAssets;
use crate::backends::sim::apply_ops;
use crate::backends::{BackendError, ChatClient, Detector, Editor, Generator, ImageRef};
use crate::boxmodel::ObjectList;
use crate::corpus::{retrieve, Corpus, CorpusError, PoemRecord};
use crate::elements::{extract_elements, ElementError, KeyElement, KeyElementSet};
use crate::embedding::Embedder;
use crate::suggest::{
    diff_objects, llm_suggest, prompt_from_plan, rule_based_suggest, EditPlan, SuggestConfig,
    Suggestion,
};
use crate::text::normalize_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggesterMode {
    Llm,
    #[default]
    RuleBased,
}

/// Which text the initial image is generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationSource {
    #[default]
    Translation,
    /// Ablation: the original poem text.
    Poem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_rounds: u32,
    pub detection_threshold: f64,
    pub suggester_mode: SuggesterMode,
    pub overlap_threshold: f64,
    /// Completeness required (together with an all-Retain plan) to stop.
    pub completeness_target: f64,
    pub generation_source: GenerationSource,
    /// Reject retrieval matches below this similarity.
    pub retrieval_floor: Option<f64>,
    /// Labels always added to the detector vocabulary.
    pub extra_labels: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            detection_threshold: 0.3,
            suggester_mode: SuggesterMode::RuleBased,
            overlap_threshold: 0.5,
            completeness_target: 1.0,
            generation_source: GenerationSource::Translation,
            retrieval_floor: None,
            extra_labels: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds < 1 {
            return Err("max_rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.completeness_target) {
            return Err("completeness_target must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err("detection_threshold must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err("overlap_threshold must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn suggest_config(&self) -> SuggestConfig {
        SuggestConfig {
            overlap_threshold: self.overlap_threshold,
        }
    }
}

/// The model services one run talks to. Cheap to clone and share.
#[derive(Clone)]
pub struct Clients {
    pub chat: Arc<dyn ChatClient>,
    pub generator: Arc<dyn Generator>,
    pub detector: Arc<dyn Detector>,
    pub editor: Arc<dyn Editor>,
    pub embedder: Arc<dyn Embedder>,
}

impl Clients {
    pub fn ids(&self) -> BackendIds {
        BackendIds {
            chat: self.chat.id().into(),
            generator: self.generator.id().into(),
            detector: self.detector.id().into(),
            editor: self.editor.id().into(),
            embedder: self.embedder.id().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIds {
    pub chat: String,
    pub generator: String,
    pub detector: String,
    pub editor: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageNode {
    pub id: String,
    pub parent: Option<String>,
    pub round: u32,
    pub prompt: String,
}

impl From<&ImageRef> for LineageNode {
    fn from(img: &ImageRef) -> Self {
        Self {
            id: img.id.clone(),
            parent: img.provenance.parent.clone(),
            round: img.provenance.round,
            prompt: img.provenance.prompt.clone(),
        }
    }
}

/// One detect-and-suggest step. `applied` is false for the final check
/// whose plan was not sent to the editor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub image_id: String,
    pub detected: ObjectList,
    pub completeness: f64,
    pub updated: ObjectList,
    pub plan: EditPlan,
    pub fallback_reason: Option<String>,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub final_image: ImageRef,
    pub rounds_used: u32,
    pub converged: bool,
    pub per_round_completeness: Vec<f64>,
    pub key_elements: KeyElementSet,
    pub history: Vec<RoundRecord>,
    pub lineage: Vec<LineageNode>,
}

impl PipelineResult {
    pub fn initial_detected(&self) -> &ObjectList {
        &self
            .history
            .first()
            .expect("history holds at least one round")
            .detected
    }

    pub fn final_detected(&self) -> &ObjectList {
        &self
            .history
            .last()
            .expect("history holds at least one round")
            .detected
    }

    /// Plans that were sent to the editor, in order.
    pub fn applied_plans(&self) -> impl Iterator<Item = &EditPlan> {
        self.history.iter().filter(|r| r.applied).map(|r| &r.plan)
    }
}

#[derive(Debug, Error)]
pub enum PipelineErrorKind {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Elements(#[from] ElementError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("the key element set is empty")]
    EmptyKey,
}

/// Work finished before a failure.
#[derive(Debug, Clone)]
pub struct PartialRun {
    /// Latest image with the highest completeness seen.
    pub best_image: ImageRef,
    pub history: Vec<RoundRecord>,
    pub lineage: Vec<LineageNode>,
}

#[derive(Debug, Error)]
#[error("{kind}")]
pub struct PipelineError {
    pub kind: PipelineErrorKind,
    pub partial: Option<Box<PartialRun>>,
}

impl<E: Into<PipelineErrorKind>> From<E> for PipelineError {
    fn from(e: E) -> Self {
        Self {
            kind: e.into(),
            partial: None,
        }
    }
}

/// Splits the key elements into those some detected object names exactly
/// (after normalization) and those none does.
pub fn element_match(
    detected: &ObjectList,
    key: &KeyElementSet,
) -> (Vec<KeyElement>, Vec<KeyElement>) {
    key.elements
        .iter()
        .cloned()
        .partition(|e| detected.contains_name(&e.name()))
}

fn vocabulary(key: &KeyElementSet, believed: &ObjectList, extra: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let candidates = key
        .names()
        .into_iter()
        .chain(believed.names().map(str::to_string))
        .chain(extra.iter().map(|l| normalize_label(l)));
    for name in candidates {
        if !name.is_empty() && !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Output of the retrieval, extraction and first generation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialStage {
    pub image: ImageRef,
    pub key: KeyElementSet,
    pub record: PoemRecord,
    pub retrieval_similarity: f64,
}

pub fn initial_generation(
    query: &str,
    corpus: &Corpus,
    clients: &Clients,
    cfg: &PipelineConfig,
    assets: &PromptAssets,
) -> Result<InitialStage, PipelineError> {
    cfg.validate().map_err(PipelineErrorKind::Config)?;
    let hit = retrieve(
        query,
        corpus,
        clients.embedder.as_ref(),
        cfg.retrieval_floor,
    )?;
    let key = extract_elements(&hit.record, clients.chat.as_ref(), assets)?;
    let prompt = match cfg.generation_source {
        GenerationSource::Translation => &hit.record.translation,
        GenerationSource::Poem => &hit.record.poem,
    };
    let image = clients.generator.generate(prompt)?;
    Ok(InitialStage {
        image,
        key,
        record: hit.record,
        retrieval_similarity: hit.similarity,
    })
}

fn suggest(
    detected: &ObjectList,
    record: &PoemRecord,
    key: &KeyElementSet,
    cfg: &PipelineConfig,
    clients: &Clients,
    assets: &PromptAssets,
) -> Suggestion {
    match cfg.suggester_mode {
        SuggesterMode::RuleBased => Suggestion {
            updated: rule_based_suggest(detected, key, &cfg.suggest_config()),
            fallback_reason: None,
        },
        SuggesterMode::Llm => llm_suggest(
            detected,
            record,
            key,
            clients.chat.as_ref(),
            assets,
            &cfg.suggest_config(),
        ),
    }
}

/// Runs detect -> suggest -> diff -> prompt -> edit rounds. Stops when the
/// completeness target is met and the suggester proposes no change, or
/// after `max_rounds` edits. Each round detects once; that detection serves
/// both as the suggester input and as the completeness measurement.
pub fn correction_loop(
    image: ImageRef,
    key: &KeyElementSet,
    record: &PoemRecord,
    cfg: &PipelineConfig,
    clients: &Clients,
    assets: &PromptAssets,
) -> Result<PipelineResult, PipelineError> {
    cfg.validate().map_err(PipelineErrorKind::Config)?;
    if key.is_empty() {
        return Err(PipelineErrorKind::EmptyKey.into());
    }
    let mut image = image;
    let mut lineage = vec![LineageNode::from(&image)];
    let mut history: Vec<RoundRecord> = Vec::new();
    let mut best: (f64, ImageRef) = (f64::NEG_INFINITY, image.clone());
    let mut believed = ObjectList::empty();
    let mut round = 0u32;

    let fail = |kind: PipelineErrorKind,
                best: &(f64, ImageRef),
                history: &[RoundRecord],
                lineage: &[LineageNode]| {
        PipelineError {
            kind,
            partial: Some(Box::new(PartialRun {
                best_image: best.1.clone(),
                history: history.to_vec(),
                lineage: lineage.to_vec(),
            })),
        }
    };

    let converged = loop {
        let vocab = vocabulary(key, &believed, &cfg.extra_labels);
        let detected = match clients.detector.detect(&image, &vocab) {
            Ok(d) => d.to_object_list(),
            Err(e) => return Err(fail(e.into(), &best, &history, &lineage)),
        };
        let (present, _) = element_match(&detected, key);
        let completeness = present.len() as f64 / key.len() as f64;
        if completeness >= best.0 {
            best = (completeness, image.clone());
        }
        let suggestion = suggest(&detected, record, key, cfg, clients, assets);
        let plan = diff_objects(&detected, &suggestion.updated, round + 1);
        let done = completeness >= cfg.completeness_target && plan.is_all_retain();
        let last = done || round >= cfg.max_rounds;
        let mut entry = RoundRecord {
            round,
            image_id: image.id.clone(),
            detected: detected.clone(),
            completeness,
            updated: suggestion.updated,
            plan,
            fallback_reason: suggestion.fallback_reason,
            applied: !last,
        };
        if last {
            history.push(entry);
            break done;
        }
        let prompt = prompt_from_plan(&entry.plan, record);
        match clients.editor.edit(&image, &prompt, round + 1) {
            Ok(next) => {
                lineage.push(LineageNode::from(&next));
                image = next;
            }
            Err(e) => {
                entry.applied = false;
                history.push(entry);
                return Err(fail(e.into(), &best, &history, &lineage));
            }
        }
        history.push(entry);
        believed = detected;
        round += 1;
    };

    Ok(PipelineResult {
        final_image: image,
        rounds_used: round,
        converged,
        per_round_completeness: history.iter().map(|r| r.completeness).collect(),
        key_elements: key.clone(),
        history,
        lineage,
    })
}

/// Full run for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub record: PoemRecord,
    pub retrieval_similarity: f64,
    pub generation_prompt: String,
    pub result: PipelineResult,
}

pub fn run_pipeline(
    query: &str,
    corpus: &Corpus,
    clients: &Clients,
    cfg: &PipelineConfig,
    assets: &PromptAssets,
) -> Result<RunOutput, PipelineError> {
    let init = initial_generation(query, corpus, clients, cfg, assets)?;
    let generation_prompt = init.image.provenance.prompt.clone();
    let result = correction_loop(init.image, &init.key, &init.record, cfg, clients, assets)?;
    Ok(RunOutput {
        record: init.record,
        retrieval_similarity: init.retrieval_similarity,
        generation_prompt,
        result,
    })
}

/// Re-applies the applied plans of a run to a starting scene.
pub fn replay_plans<'a>(
    initial: &ObjectList,
    plans: impl IntoIterator<Item = &'a EditPlan>,
) -> Result<ObjectList, BackendError> {
    plans
        .into_iter()
        .try_fold(initial.clone(), |scene, plan| apply_ops(&scene, &plan.ops))
}
