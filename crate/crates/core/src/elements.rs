//! Key picture elements: the extractor prompt, parsing of the numbered
//! element list it produces, and scoring extractions against manual labels.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::PromptAssets;
use crate::backends::{BackendError, ChatClient};
use crate::corpus::PoemRecord;
use crate::embedding::{EmbedError, Embedder};
use crate::text::{collapse_whitespace, normalize_label};

/// Separator used when a label list is flattened to one string for embedding.
pub const LABEL_SEPARATOR: &str = "; ";

#[derive(Debug, Error)]
pub enum ElementError {
    #[error("no numbered element list after an \"Image elements\" marker")]
    NoListFound,
    #[error("extractor returned no element list twice")]
    NoListAfterRetry,
    #[error("cannot validate an empty element list ({0})")]
    EmptySide(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyElement {
    pub label: String,
    /// 1-based position in the extractor's list.
    pub ordinal: u32,
}

impl KeyElement {
    /// Label in the normalized form used for name matching.
    pub fn name(&self) -> String {
        normalize_label(&self.label)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyElementSet {
    pub elements: Vec<KeyElement>,
    pub source_record_id: String,
}

impl KeyElementSet {
    /// Cleans labels, drops empties and keeps the first of any duplicates.
    pub fn from_labels<S: AsRef<str>>(
        labels: impl IntoIterator<Item = S>,
        source_record_id: impl Into<String>,
    ) -> Self {
        let mut seen = HashSet::new();
        let mut elements = Vec::new();
        for raw in labels {
            let label = clean_label(raw.as_ref());
            if label.is_empty() || !seen.insert(normalize_label(&label)) {
                continue;
            }
            elements.push(KeyElement {
                ordinal: elements.len() as u32 + 1,
                label,
            });
        }
        Self {
            elements,
            source_record_id: source_record_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(|e| e.label.as_str())
    }

    /// Normalized names in extractor order.
    pub fn names(&self) -> Vec<String> {
        self.elements.iter().map(KeyElement::name).collect()
    }

    /// The numbered-list form the extractor is asked to produce.
    pub fn to_response_text(&self) -> String {
        let mut out = String::from("Image elements:\n");
        for e in &self.elements {
            out.push_str(&format!("{}. {}\n", e.ordinal, e.label));
        }
        out
    }
}

/// Strips brackets and quotation marks and collapses whitespace.
fn clean_label(raw: &str) -> String {
    let stripped: String = raw
        .chars()
        .filter(|c| {
            !matches!(
                c,
                '(' | ')'
                    | '['
                    | ']'
                    | '{'
                    | '}'
                    | '"'
                    | '\''
                    | '“'
                    | '”'
                    | '‘'
                    | '’'
                    | '「'
                    | '」'
                    | '《'
                    | '》'
                    | '*'
                    | '`'
            )
        })
        .collect();
    collapse_whitespace(&stripped)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
}

/// System text is the bundled extractor prompt; the user text follows the
/// labelled layout of the prompt's worked examples.
pub fn build_extractor_prompt(record: &PoemRecord, assets: &PromptAssets) -> ChatPrompt {
    ChatPrompt {
        system: assets.extractor().to_string(),
        user: format!(
            "Original sentence: {}\nTranslation: {}\nAppreciation: {}",
            record.poem, record.translation, record.appreciation
        ),
    }
}

fn is_marker(line: &str) -> bool {
    let l = line.to_lowercase();
    l.contains("image elements") || l.contains("picture elements")
}

/// `"3. Broad flat hill"` -> `Some("Broad flat hill")`
fn numbered_item(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = t[digits..].trim_start();
    let mut chars = rest.chars();
    match chars.next() {
        Some('.' | ')' | '、' | '．' | ':') => Some(chars.as_str().trim()),
        _ => None,
    }
}

/// Takes the numbered list under the last marker line that has one.
pub fn parse_element_list(response: &str) -> Result<KeyElementSet, ElementError> {
    let lines: Vec<&str> = response.lines().collect();
    for marker in (0..lines.len()).rev().filter(|&i| is_marker(lines[i])) {
        let mut items = Vec::new();
        for line in &lines[marker + 1..] {
            if line.trim().is_empty() {
                continue;
            }
            match numbered_item(line) {
                Some(item) => items.push(item),
                None => break,
            }
        }
        let set = KeyElementSet::from_labels(items, "");
        if !set.is_empty() {
            return Ok(set);
        }
    }
    Err(ElementError::NoListFound)
}

/// One extractor call, retried once if the reply has no element list.
pub fn extract_elements(
    record: &PoemRecord,
    llm: &dyn ChatClient,
    assets: &PromptAssets,
) -> Result<KeyElementSet, ElementError> {
    let prompt = build_extractor_prompt(record, assets);
    for _ in 0..2 {
        let reply = llm.chat(&prompt.system, &prompt.user)?;
        match parse_element_list(&reply) {
            Ok(mut set) => {
                set.source_record_id = record.id.clone();
                return Ok(set);
            }
            Err(ElementError::NoListFound) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ElementError::NoListAfterRetry)
}

/// Cosine similarity between the joined automatic and manual label lists.
pub fn validate_extraction<S: AsRef<str>>(
    auto: &KeyElementSet,
    manual: &[S],
    provider: &dyn Embedder,
) -> Result<f64, ElementError> {
    if auto.is_empty() {
        return Err(ElementError::EmptySide("automatic"));
    }
    if manual.is_empty() {
        return Err(ElementError::EmptySide("manual"));
    }
    let auto_text = auto.labels().collect::<Vec<_>>().join(LABEL_SEPARATOR);
    let manual_text = manual
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(LABEL_SEPARATOR);
    Ok(provider.similarity(&auto_text, &manual_text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScore {
    pub record_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSuiteReport {
    pub extractor: String,
    pub scores: Vec<ExtractionScore>,
    pub mean: f64,
}

/// Runs the extractor over every record that carries manual labels and
/// averages the validation similarity.
pub fn validate_suite(
    records: &[PoemRecord],
    llm: &dyn ChatClient,
    assets: &PromptAssets,
    provider: &dyn Embedder,
) -> Result<ExtractionSuiteReport, ElementError> {
    let mut scores = Vec::new();
    for rec in records {
        let Some(manual) = rec.manual_elements.as_deref().filter(|m| !m.is_empty()) else {
            continue;
        };
        let auto = extract_elements(rec, llm, assets)?;
        scores.push(ExtractionScore {
            record_id: rec.id.clone(),
            similarity: validate_extraction(&auto, manual, provider)?,
        });
    }
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|s| s.similarity).sum::<f64>() / scores.len() as f64
    };
    Ok(ExtractionSuiteReport {
        extractor: llm.id().to_string(),
        scores,
        mean,
    })
}
