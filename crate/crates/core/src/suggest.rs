//! Edit planning: updated object lists from the suggester model or the
//! rule-based reference policy, diffs into Retain/Remove/Add/Move/Replace
//! operations, and the edit prompt handed to the editing backend.

use serde::{Deserialize, Serialize};

use crate::assets::PromptAssets;
use crate::backends::ChatClient;
use crate::boxmodel::{
    iou, parse_object_list, serialize_object_list, BoundingBox, ObjectList, SceneObject,
};
use crate::corpus::PoemRecord;
use crate::elements::KeyElementSet;

/// Boxes closer than this in every coordinate count as unchanged.
pub const RETAIN_TOLERANCE: f64 = 1e-3;
/// Minimum IoU for a removed/added pair to be read as an in-place replacement.
pub const REPLACE_MIN_IOU: f64 = 0.9;

/// Side of the square boxes placed by [`place_missing`].
pub const PLACEMENT_BOX: f64 = 0.25;
const GRID: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuggestConfig {
    /// Kept boxes overlapping more than this are relocated.
    pub overlap_threshold: f64,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        Self {
            overlap_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Retain,
    Remove,
    Add,
    Move,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Retain {
        subject: SceneObject,
    },
    Remove {
        subject: SceneObject,
    },
    Add {
        target: SceneObject,
    },
    /// Same key, new box.
    Move {
        subject: SceneObject,
        target: SceneObject,
    },
    /// Different name, (nearly) the same box.
    Replace {
        subject: SceneObject,
        target: SceneObject,
    },
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::Retain { .. } => EditKind::Retain,
            EditOp::Remove { .. } => EditKind::Remove,
            EditOp::Add { .. } => EditKind::Add,
            EditOp::Move { .. } => EditKind::Move,
            EditOp::Replace { .. } => EditKind::Replace,
        }
    }

    pub fn subject(&self) -> Option<&SceneObject> {
        match self {
            EditOp::Retain { subject } | EditOp::Remove { subject } => Some(subject),
            EditOp::Move { subject, .. } | EditOp::Replace { subject, .. } => Some(subject),
            EditOp::Add { .. } => None,
        }
    }

    pub fn target(&self) -> Option<&SceneObject> {
        match self {
            EditOp::Add { target }
            | EditOp::Move { target, .. }
            | EditOp::Replace { target, .. } => Some(target),
            EditOp::Retain { .. } | EditOp::Remove { .. } => None,
        }
    }

    /// The object as it exists after the edit, if any.
    pub fn post_state(&self) -> Option<&SceneObject> {
        match self {
            EditOp::Retain { subject } => Some(subject),
            EditOp::Remove { .. } => None,
            other => other.target(),
        }
    }

    /// One-line canonical rendering for logs and manifests.
    pub fn describe(&self) -> String {
        let obj = |o: &SceneObject| format!("'{}' {}", o.tag(), o.bbox);
        match self {
            EditOp::Retain { subject } => format!("retain {}", obj(subject)),
            EditOp::Remove { subject } => format!("remove {}", obj(subject)),
            EditOp::Add { target } => format!("add {}", obj(target)),
            EditOp::Move { subject, target } => format!("move {} -> {}", obj(subject), target.bbox),
            EditOp::Replace { subject, target } => {
                format!("replace {} -> {}", obj(subject), obj(target))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub ops: Vec<EditOp>,
    pub round: u32,
}

impl EditPlan {
    pub fn is_all_retain(&self) -> bool {
        self.ops.iter().all(|op| op.kind() == EditKind::Retain)
    }

    pub fn count(&self, kind: EditKind) -> usize {
        self.ops.iter().filter(|op| op.kind() == kind).count()
    }

    /// Objects present after the plan: retained subjects plus every target.
    pub fn post_state(&self) -> ObjectList {
        ObjectList::renumbered(
            self.ops
                .iter()
                .filter_map(|op| op.post_state().cloned())
                .collect(),
        )
    }
}

/// Diffs two object lists keyed by (name, occurrence).
///
/// Ops come out grouped as Retain, Replace, Move, Remove, Add; inside a group
/// they follow the current list, except Add which follows the updated list.
pub fn diff_objects(current: &ObjectList, updated: &ObjectList, round: u32) -> EditPlan {
    let mut retains = Vec::new();
    let mut moves = Vec::new();
    let mut current_only = Vec::new();
    for (ci, c) in current.iter().enumerate() {
        match updated.get(&c.name, c.occurrence) {
            Some(u) if c.bbox.max_abs_diff(&u.bbox) < RETAIN_TOLERANCE => {
                retains.push(EditOp::Retain { subject: c.clone() })
            }
            Some(u) => moves.push(EditOp::Move {
                subject: c.clone(),
                target: u.clone(),
            }),
            None => current_only.push(ci),
        }
    }
    let updated_only: Vec<usize> = updated
        .iter()
        .enumerate()
        .filter(|(_, u)| current.get(&u.name, u.occurrence).is_none())
        .map(|(i, _)| i)
        .collect();

    let mut pairs = Vec::new();
    for &ci in &current_only {
        for &ui in &updated_only {
            let overlap = iou(&current.objects()[ci].bbox, &updated.objects()[ui].bbox);
            if overlap >= REPLACE_MIN_IOU {
                pairs.push((overlap, ci, ui));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_c = vec![false; current.len()];
    let mut used_u = vec![false; updated.len()];
    let mut fused = Vec::new();
    for (_, ci, ui) in pairs {
        if !used_c[ci] && !used_u[ui] {
            used_c[ci] = true;
            used_u[ui] = true;
            fused.push((ci, ui));
        }
    }
    fused.sort_unstable();

    let mut ops = retains;
    ops.extend(fused.into_iter().map(|(ci, ui)| EditOp::Replace {
        subject: current.objects()[ci].clone(),
        target: updated.objects()[ui].clone(),
    }));
    ops.extend(moves);
    ops.extend(
        current_only
            .iter()
            .filter(|&&ci| !used_c[ci])
            .map(|&ci| EditOp::Remove {
                subject: current.objects()[ci].clone(),
            }),
    );
    ops.extend(
        updated_only
            .iter()
            .filter(|&&ui| !used_u[ui])
            .map(|&ui| EditOp::Add {
                target: updated.objects()[ui].clone(),
            }),
    );
    EditPlan { ops, round }
}

/// The nine placement candidates: a 0.25 square centred in each cell of a
/// 3x3 grid, row-major from the top left, rounded to wire precision.
pub fn placement_cells() -> Vec<BoundingBox> {
    let cell = 1.0 / GRID as f64;
    let inset = (cell - PLACEMENT_BOX) / 2.0;
    let mut out = Vec::with_capacity(GRID * GRID);
    for row in 0..GRID {
        for col in 0..GRID {
            let b = BoundingBox::new(
                col as f64 * cell + inset,
                row as f64 * cell + inset,
                PLACEMENT_BOX,
                PLACEMENT_BOX,
            )
            .expect("grid cells lie inside the unit square");
            out.push(b.quantized());
        }
    }
    out
}

/// Picks the grid cell whose worst overlap with `existing` is smallest.
pub fn place_missing<'a>(existing: impl IntoIterator<Item = &'a BoundingBox>) -> BoundingBox {
    let existing: Vec<&BoundingBox> = existing.into_iter().collect();
    let mut best: Option<(f64, BoundingBox)> = None;
    for cell in placement_cells() {
        let worst = existing.iter().map(|b| iou(&cell, b)).fold(0.0, f64::max);
        if best.is_none_or(|(w, _)| worst < w) {
            best = Some((worst, cell));
        }
    }
    best.expect("grid is non-empty").1
}

/// Deterministic reference suggester: drops objects outside the key set,
/// relocates a kept box that overlaps an earlier one too much, and adds
/// every missing key element in a free grid cell.
pub fn rule_based_suggest(
    current: &ObjectList,
    key: &KeyElementSet,
    cfg: &SuggestConfig,
) -> ObjectList {
    let names = key.names();
    let mut out: Vec<SceneObject> = current
        .iter()
        .filter(|o| names.contains(&o.name))
        .cloned()
        .collect();

    for i in 1..out.len() {
        let conflict = out[..i]
            .iter()
            .any(|o| iou(&o.bbox, &out[i].bbox) > cfg.overlap_threshold);
        if conflict {
            let others: Vec<BoundingBox> = out
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o.bbox)
                .collect();
            out[i].bbox = place_missing(&others);
        }
    }

    for name in &names {
        if !out.iter().any(|o| &o.name == name) {
            let bbox = place_missing(out.iter().map(|o| &o.bbox));
            out.push(SceneObject {
                name: name.clone(),
                occurrence: 1,
                bbox,
            });
        }
    }
    ObjectList::renumbered(out)
}

/// Result of one suggester step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub updated: ObjectList,
    /// Set when the model reply was unusable and the rule-based policy ran.
    pub fallback_reason: Option<String>,
}

/// `['sunshine', 'peak']`
pub fn format_label_list<'a>(labels: impl IntoIterator<Item = &'a str>) -> String {
    let quoted: Vec<String> = labels.into_iter().map(|l| format!("'{l}'")).collect();
    format!("[{}]", quoted.join(", "))
}

/// User half of the suggester prompt, laid out like its worked example.
pub fn build_suggester_user(
    current: &ObjectList,
    record: &PoemRecord,
    key: &KeyElementSet,
) -> String {
    format!(
        "User Prompt:\n- Image Description: \"{}\"\n- Elements that must be included: {}\nCurrent Objects: {}",
        record.translation,
        format_label_list(key.labels()),
        serialize_object_list(current)
    )
}

/// Text after the last `Updated Objects:` marker (same line, or the next
/// non-empty line when the marker ends its line).
pub fn extract_updated_line(reply: &str) -> Option<&str> {
    const MARKER: &str = "Updated Objects:";
    let idx = reply.rfind(MARKER)?;
    let after = &reply[idx + MARKER.len()..];
    let mut lines = after.lines();
    let first = lines.next().unwrap_or("").trim();
    let line = if first.is_empty() {
        lines.map(str::trim).find(|l| !l.is_empty())?
    } else {
        first
    };
    Some(line.trim_matches('`').trim())
}

/// Asks the suggester model for an updated list. Two failed attempts (a
/// transport error or an unparseable reply) fall back to the rule-based
/// policy, and the result records why.
pub fn llm_suggest(
    current: &ObjectList,
    record: &PoemRecord,
    key: &KeyElementSet,
    llm: &dyn ChatClient,
    assets: &PromptAssets,
    cfg: &SuggestConfig,
) -> Suggestion {
    let user = build_suggester_user(current, record, key);
    let mut reason = String::new();
    for _ in 0..2 {
        match llm.chat(assets.suggester(), &user) {
            Ok(reply) => match extract_updated_line(&reply) {
                Some(line) => match parse_object_list(line) {
                    Ok(updated) => {
                        return Suggestion {
                            updated,
                            fallback_reason: None,
                        }
                    }
                    Err(e) => reason = format!("unparseable Updated Objects: {e}"),
                },
                None => reason = "reply has no Updated Objects line".into(),
            },
            Err(e) => reason = e.to_string(),
        }
    }
    Suggestion {
        updated: rule_based_suggest(current, key, cfg),
        fallback_reason: Some(reason),
    }
}

/// What the editing backend receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPrompt {
    pub instruction: String,
    /// Labelled boxes of the full post-edit scene.
    pub grounded_boxes: ObjectList,
    /// The plan the instruction was rendered from.
    pub ops: Vec<EditOp>,
}

fn display_name(o: &SceneObject) -> String {
    if o.occurrence > 1 {
        o.tag()
    } else {
        o.name.clone()
    }
}

/// Renders the non-Retain ops as editing clauses and appends the
/// translation as scene context.
pub fn prompt_from_plan(plan: &EditPlan, record: &PoemRecord) -> EditPrompt {
    let clauses: Vec<String> = plan
        .ops
        .iter()
        .filter_map(|op| match op {
            EditOp::Retain { .. } => None,
            EditOp::Add { target } => Some(format!(
                "add {} in region {}",
                display_name(target),
                target.bbox
            )),
            EditOp::Remove { subject } => Some(format!("remove {}", display_name(subject))),
            EditOp::Move { subject, target } => {
                Some(format!("move {} to {}", display_name(subject), target.bbox))
            }
            EditOp::Replace { subject, target } => Some(format!(
                "replace {} with {}",
                display_name(subject),
                display_name(target)
            )),
        })
        .collect();
    let context = format!("Scene: {}", record.translation);
    let instruction = if clauses.is_empty() {
        context
    } else {
        format!("{}.\n{context}", clauses.join("; "))
    };
    EditPrompt {
        instruction,
        grounded_boxes: plan.post_state(),
        ops: plan.ops.clone(),
    }
}
