//! Image scoring: elemental completeness, semantic consistency, their
//! weighted combination, and the round and model-comparison reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::ObjectList;
use crate::elements::KeyElementSet;
use crate::embedding::{EmbedError, Embedder};

/// Separator between detected names when they are read as one text.
pub const CONTENT_SEPARATOR: &str = " ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error("key element set is empty")]
    EmptyKey,
    #[error("translation is empty")]
    EmptyTranslation,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Weight of semantic consistency.
    pub alpha: f64,
    /// Weight of elemental completeness.
    pub beta: f64,
    pub s_eps: f64,
    pub e_eps: f64,
    /// Cosine above which a detected name counts as covering a key element.
    pub match_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            s_eps: 1.0,
            e_eps: 1.0,
            match_threshold: 0.8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.into()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if self.alpha + self.beta <= 0.0 {
            return bad("alpha + beta must be positive");
        }
        if !(self.s_eps > 0.0 && self.e_eps > 0.0) {
            return bad("s_eps and e_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return bad("match_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScore {
    /// Semantic consistency.
    pub s: f64,
    /// Elemental completeness.
    pub e: f64,
    pub theta: f64,
}

/// Fraction of key elements covered by a detected name, either exactly
/// (after normalization) or with embedding cosine at least the threshold.
pub fn completeness(
    detected: &ObjectList,
    key: &KeyElementSet,
    provider: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    if key.is_empty() {
        return Err(EvalError::EmptyKey);
    }
    let mut names: Vec<&str> = detected.names().collect();
    names.dedup();
    let name_vecs = names
        .iter()
        .map(|n| provider.embed(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut covered = 0usize;
    for element in &key.elements {
        let label = element.name();
        if names.iter().any(|n| *n == label) {
            covered += 1;
            continue;
        }
        if name_vecs.is_empty() {
            continue;
        }
        let v = provider.embed(&label)?;
        for nv in &name_vecs {
            if v.cosine(nv)? >= cfg.match_threshold {
                covered += 1;
                break;
            }
        }
    }
    Ok(covered as f64 / key.len() as f64)
}

/// Cosine between the detected names (list order, one entry per object)
/// read as a text and the translation. No detections scores 0.0.
pub fn consistency(
    detected: &ObjectList,
    translation: &str,
    provider: &dyn Embedder,
) -> Result<f64, EvalError> {
    if translation.is_empty() {
        return Err(EvalError::EmptyTranslation);
    }
    if detected.is_empty() {
        return Ok(0.0);
    }
    let content = detected.names().collect::<Vec<_>>().join(CONTENT_SEPARATOR);
    Ok(provider.similarity(&content, translation)?)
}

/// `(alpha * s / s_eps + beta * e / e_eps) / (alpha + beta)`
pub fn theta(s: f64, e: f64, cfg: &EvalConfig) -> Result<f64, EvalError> {
    cfg.validate()?;
    Ok((cfg.alpha * (s / cfg.s_eps) + cfg.beta * (e / cfg.e_eps)) / (cfg.alpha + cfg.beta))
}

pub fn score(
    detected: &ObjectList,
    key: &KeyElementSet,
    translation: &str,
    provider: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<EvalScore, EvalError> {
    let s = consistency(detected, translation, provider)?;
    let e = completeness(detected, key, provider, cfg)?;
    Ok(EvalScore {
        s,
        e,
        theta: theta(s, e, cfg)?,
    })
}

/// Two-decimal rounding that never yields a negative zero.
fn round2(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", round2(v))
}

fn signed_pct(v: f64) -> String {
    format!("{:+.2}%", round2(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    /// Percent.
    pub completeness: f64,
    /// Percentage points over the previous round; none for round 0.
    pub improvement: Option<f64>,
}

/// Rows for a per-round completeness trace given as fractions.
pub fn round_report(trace: &[f64]) -> Vec<RoundRow> {
    trace
        .iter()
        .enumerate()
        .map(|(i, &c)| RoundRow {
            round: i,
            completeness: c * 100.0,
            improvement: (i > 0).then(|| (c - trace[i - 1]) * 100.0),
        })
        .collect()
}

pub fn render_round_table(rows: &[RoundRow]) -> String {
    let mut out = format!(
        "{:<6} {:>20} {:>10}\n",
        "Round", "Elem. Completeness", "Improv."
    );
    for r in rows {
        let imp = r.improvement.map_or_else(|| "-".to_string(), signed_pct);
        out.push_str(&format!(
            "{:<6} {:>20} {:>10}\n",
            r.round,
            pct(r.completeness),
            imp
        ));
    }
    out
}

/// Baseline versus corrected scores for one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    /// All values in percent.
    pub completeness_before: f64,
    pub completeness_after: f64,
    pub completeness_delta: f64,
    pub consistency_before: f64,
    pub consistency_after: f64,
    pub consistency_delta: f64,
}

pub fn comparison_report(runs: &[(String, EvalScore, EvalScore)]) -> Vec<ComparisonRow> {
    runs.iter()
        .map(|(label, before, after)| ComparisonRow {
            label: label.clone(),
            completeness_before: before.e * 100.0,
            completeness_after: after.e * 100.0,
            completeness_delta: (after.e - before.e) * 100.0,
            consistency_before: before.s * 100.0,
            consistency_after: after.s * 100.0,
            consistency_delta: (after.s - before.s) * 100.0,
        })
        .collect()
}

/// Two lines per label: the baseline, then the corrected scores with
/// parenthesized deltas.
pub fn render_comparison_table(rows: &[ComparisonRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.label.chars().count() + "+corrected".len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut lines = vec![format!(
        "{:<width$}  {:<24}  {}",
        "Method", "Elemental Completeness", "Semantic Consistency"
    )];
    for r in rows {
        lines.push(format!(
            "{:<width$}  {:<24}  {}",
            r.label,
            pct(r.completeness_before),
            pct(r.consistency_before)
        ));
        lines.push(format!(
            "{:<width$}  {:<24}  {} ({})",
            format!("{}+corrected", r.label),
            format!(
                "{} ({})",
                pct(r.completeness_after),
                signed_pct(r.completeness_delta)
            ),
            pct(r.consistency_after),
            signed_pct(r.consistency_delta),
        ));
    }
    lines.into_iter().map(|l| l + "\n").collect()
}

/// Per-round mean of several traces. A trace shorter than the longest one
/// stopped early, so its last value is carried forward.
pub fn mean_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    let live: Vec<&Vec<f64>> = traces.iter().filter(|t| !t.is_empty()).collect();
    (0..len)
        .map(|i| {
            let sum: f64 = live.iter().map(|t| t[i.min(t.len() - 1)]).sum();
            sum / live.len() as f64
        })
        .collect()
}

/// Component-wise mean; `None` for an empty slice.
pub fn mean_score(scores: &[EvalScore]) -> Option<EvalScore> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(EvalScore {
        s: scores.iter().map(|x| x.s).sum::<f64>() / n,
        e: scores.iter().map(|x| x.e).sum::<f64>() / n,
        theta: scores.iter().map(|x| x.theta).sum::<f64>() / n,
    })
}

/// One line per label, in order of first appearance, averaging the
/// baseline and corrected scores of every run carrying that label.
pub fn group_by_label(
    runs: &[(String, EvalScore, EvalScore)],
) -> Vec<(String, EvalScore, EvalScore)> {
    let mut labels: Vec<&str> = Vec::new();
    for (l, _, _) in runs {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let (before, after): (Vec<EvalScore>, Vec<EvalScore>) = runs
                .iter()
                .filter(|(l, _, _)| l == label)
                .map(|(_, b, a)| (*b, *a))
                .unzip();
            (
                label.to_string(),
                mean_score(&before).expect("label has runs"),
                mean_score(&after).expect("label has runs"),
            )
        })
        .collect()
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("report rows serialize") + "\n")
        .collect()
}
