//! Per-run manifest: everything needed to audit or re-score a run without
//! talking to any model again.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::{parse_object_list, serialize_object_list, BoxError, ObjectList};
use crate::elements::KeyElementSet;
use crate::embedding::Embedder;
use crate::evaluate::{score, EvalConfig, EvalError, EvalScore};
use crate::pipeline::{BackendIds, LineageNode, PipelineConfig, RunOutput};

pub const MANIFEST_EXTENSION: &str = "manifest";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("inconsistent manifest: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Box(#[from] BoxError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRound {
    pub round: u32,
    pub image_id: String,
    /// Detected objects, canonical text form.
    pub detected: String,
    pub completeness: f64,
    /// Suggested objects, canonical text form.
    pub updated: String,
    pub ops: Vec<String>,
    pub fallback_reason: Option<String>,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub label: String,
    pub started_at: String,
    pub finished_at: String,
    pub query: String,
    pub record_id: String,
    pub translation: String,
    pub retrieval_similarity: f64,
    pub generation_prompt: String,
    pub key_elements: Vec<String>,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub backends: BackendIds,
    pub rounds: Vec<ManifestRound>,
    pub completeness_trace: Vec<f64>,
    pub rounds_used: u32,
    pub converged: bool,
    pub baseline: EvalScore,
    pub corrected: EvalScore,
    pub final_image_id: String,
    pub lineage: Vec<LineageNode>,
}

/// Identity and timing of a run, supplied by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStamp {
    pub run_id: String,
    pub label: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn from_run(
        stamp: RunStamp,
        query: &str,
        run: &RunOutput,
        pipeline: &PipelineConfig,
        eval: &EvalConfig,
        backends: BackendIds,
        provider: &dyn Embedder,
    ) -> Result<Self, ManifestError> {
        let result = &run.result;
        let key = &result.key_elements;
        let baseline = score(
            result.initial_detected(),
            key,
            &run.record.translation,
            provider,
            eval,
        )?;
        let corrected = score(
            result.final_detected(),
            key,
            &run.record.translation,
            provider,
            eval,
        )?;
        let manifest = Self {
            run_id: stamp.run_id,
            label: stamp.label,
            started_at: stamp.started_at,
            finished_at: stamp.finished_at,
            query: query.to_string(),
            record_id: run.record.id.clone(),
            translation: run.record.translation.clone(),
            retrieval_similarity: run.retrieval_similarity,
            generation_prompt: run.generation_prompt.clone(),
            key_elements: key.labels().map(str::to_string).collect(),
            pipeline: pipeline.clone(),
            eval: *eval,
            backends,
            rounds: result
                .history
                .iter()
                .map(|r| ManifestRound {
                    round: r.round,
                    image_id: r.image_id.clone(),
                    detected: serialize_object_list(&r.detected),
                    completeness: r.completeness,
                    updated: serialize_object_list(&r.updated),
                    ops: r.plan.ops.iter().map(|op| op.describe()).collect(),
                    fallback_reason: r.fallback_reason.clone(),
                    applied: r.applied,
                })
                .collect(),
            completeness_trace: result.per_round_completeness.clone(),
            rounds_used: result.rounds_used,
            converged: result.converged,
            baseline,
            corrected,
            final_image_id: result.final_image.id.clone(),
            lineage: result.lineage.clone(),
        };
        manifest.check()?;
        Ok(manifest)
    }

    /// Structural invariants: one trace entry per detection, one detection
    /// per round plus the final check, and a lineage node per image.
    pub fn check(&self) -> Result<(), ManifestError> {
        let expect = self.rounds_used as usize + 1;
        if self.completeness_trace.len() != expect {
            return Err(ManifestError::Inconsistent(format!(
                "trace has {} entries for {} rounds",
                self.completeness_trace.len(),
                self.rounds_used
            )));
        }
        if self.rounds.len() != expect {
            return Err(ManifestError::Inconsistent(format!(
                "{} round records for {} rounds",
                self.rounds.len(),
                self.rounds_used
            )));
        }
        if self.lineage.len() != expect {
            return Err(ManifestError::Inconsistent(format!(
                "{} lineage nodes for {} rounds",
                self.lineage.len(),
                self.rounds_used
            )));
        }
        if self.key_elements.is_empty() {
            return Err(ManifestError::Inconsistent("no key elements".into()));
        }
        Ok(())
    }

    pub fn key_set(&self) -> KeyElementSet {
        KeyElementSet::from_labels(&self.key_elements, self.record_id.clone())
    }

    pub fn initial_detected(&self) -> Result<ObjectList, ManifestError> {
        Ok(parse_object_list(&self.rounds[0].detected)?)
    }

    pub fn final_detected(&self) -> Result<ObjectList, ManifestError> {
        let last = self.rounds.last().expect("checked non-empty");
        Ok(parse_object_list(&last.detected)?)
    }

    /// Recomputes baseline and corrected scores from the stored detections.
    pub fn rescore(
        &self,
        provider: &dyn Embedder,
        cfg: &EvalConfig,
    ) -> Result<(EvalScore, EvalScore), ManifestError> {
        let key = self.key_set();
        let before = score(
            &self.initial_detected()?,
            &key,
            &self.translation,
            provider,
            cfg,
        )?;
        let after = score(
            &self.final_detected()?,
            &key,
            &self.translation,
            provider,
            cfg,
        )?;
        Ok((before, after))
    }

    pub fn file_name(&self) -> String {
        format!("{}.{MANIFEST_EXTENSION}", self.run_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Writes `<dir>/<run_id>.manifest` and returns its path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, ManifestError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_json() + "\n").map_err(|source| ManifestError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| ManifestError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.check()?;
        Ok(m)
    }
}

/// Every `*.manifest` file directly inside `dir`, sorted by file name.
pub fn read_dir(dir: impl AsRef<Path>) -> Result<Vec<RunManifest>, ManifestError> {
    let dir = dir.as_ref();
    let io = |source| ManifestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == MANIFEST_EXTENSION))
        .collect();
    paths.sort();
    paths.iter().map(RunManifest::read).collect()
}
