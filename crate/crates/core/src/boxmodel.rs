//! Unit-square boxes, occurrence-indexed scene objects, and the bracketed
//! object-list text format used in prompts, logs and fixtures:
//!
//! ```text
//! [('peak #1', [0.021, 0.983, 0.949, 0.389]), ('waterfall #1', [0.390, 0.724, 0.191, 0.354])]
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("non-numeric coordinate {found:?} at offset {offset}")]
    NonNumeric { offset: usize, found: String },
    #[error("duplicate object ({name:?}, #{occurrence})")]
    Duplicate { name: String, occurrence: u32 },
    #[error("occurrences of {name:?} are not 1..{count}")]
    OccurrenceGap { name: String, count: usize },
    #[error("object name must be non-empty")]
    EmptyName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxField {
    X,
    Y,
    Width,
    Height,
    /// x + width
    ExtentX,
    /// y + height
    ExtentY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxIssue {
    pub severity: Severity,
    pub field: BoxField,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<BoxIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &BoxIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &BoxIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }
}

/// Checks raw `[x, y, w, h]` values. Coordinates outside [0, 1] and
/// non-positive sizes are errors; an extent past the right or bottom edge
/// is only a warning, since editors clamp extents when applying boxes.
pub fn validate_box(x: f64, y: f64, w: f64, h: f64) -> ValidationReport {
    let mut issues = Vec::new();
    let mut err = |field, message: String| {
        issues.push(BoxIssue {
            severity: Severity::Error,
            field,
            message,
        })
    };
    for (field, name, v) in [
        (BoxField::X, "x", x),
        (BoxField::Y, "y", y),
        (BoxField::Width, "width", w),
        (BoxField::Height, "height", h),
    ] {
        if !(0.0..=1.0).contains(&v) {
            err(field, format!("{name} = {v} is outside [0, 1]"));
        }
    }
    if w <= 0.0 {
        err(BoxField::Width, format!("width = {w} must be positive"));
    }
    if h <= 0.0 {
        err(BoxField::Height, format!("height = {h} must be positive"));
    }
    for (field, name, v) in [
        (BoxField::ExtentX, "x + width", x + w),
        (BoxField::ExtentY, "y + height", y + h),
    ] {
        if v > 1.0 {
            issues.push(BoxIssue {
                severity: Severity::Warning,
                field,
                message: format!("{name} = {v:.3} exceeds 1"),
            });
        }
    }
    ValidationReport { issues }
}

/// Axis-aligned box in the unit square: top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        let report = validate_box(x, y, w, h);
        if let Some(issue) = report.errors().next() {
            return Err(BoxError::InvalidBox(issue.message.clone()));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn report(&self) -> ValidationReport {
        validate_box(self.x, self.y, self.w, self.h)
    }

    /// Largest per-coordinate absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Coordinates rounded to the three decimals of the wire format.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| (v * 1000.0).round() / 1000.0;
        Self {
            x: q(self.x),
            y: q(self.y),
            w: q(self.w),
            h: q(self.h),
        }
    }

    fn fmt_canonical(&self) -> String {
        format!(
            "[{:.3}, {:.3}, {:.3}, {:.3}]",
            self.x, self.y, self.w, self.h
        )
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fmt_canonical())
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub occurrence: u32,
    pub bbox: BoundingBox,
}

impl SceneObject {
    /// Normalizes `name`.
    pub fn new(name: &str, occurrence: u32, bbox: BoundingBox) -> Self {
        Self {
            name: normalize_label(name),
            occurrence,
            bbox,
        }
    }

    pub fn key(&self) -> (&str, u32) {
        (&self.name, self.occurrence)
    }

    /// `name #k`
    pub fn tag(&self) -> String {
        format!("{} #{}", self.name, self.occurrence)
    }
}

/// Ordered objects whose occurrences for each name are exactly 1..k.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SceneObject>", into = "Vec<SceneObject>")]
pub struct ObjectList {
    objects: Vec<SceneObject>,
}

impl TryFrom<Vec<SceneObject>> for ObjectList {
    type Error = BoxError;

    fn try_from(objects: Vec<SceneObject>) -> Result<Self, Self::Error> {
        Self::new(objects)
    }
}

impl From<ObjectList> for Vec<SceneObject> {
    fn from(list: ObjectList) -> Self {
        list.objects
    }
}

impl ObjectList {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, BoxError> {
        let mut seen = HashSet::new();
        let mut per_name: HashMap<&str, Vec<u32>> = HashMap::new();
        for o in &objects {
            if o.name.is_empty() {
                return Err(BoxError::EmptyName);
            }
            if !seen.insert(o.key()) {
                return Err(BoxError::Duplicate {
                    name: o.name.clone(),
                    occurrence: o.occurrence,
                });
            }
            per_name.entry(&o.name).or_default().push(o.occurrence);
        }
        for (name, mut occs) in per_name {
            occs.sort_unstable();
            if occs.iter().enumerate().any(|(i, &k)| k as usize != i + 1) {
                return Err(BoxError::OccurrenceGap {
                    name: name.to_string(),
                    count: occs.len(),
                });
            }
        }
        Ok(Self { objects })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SceneObject> {
        self.objects.iter()
    }

    pub fn get(&self, name: &str, occurrence: u32) -> Option<&SceneObject> {
        self.objects
            .iter()
            .find(|o| o.name == name && o.occurrence == occurrence)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.objects.iter().any(|o| o.name == name)
    }

    /// Names in list order, one entry per object.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|o| o.name.as_str())
    }

    /// Restores the 1..k invariant for arbitrary objects: instances of each
    /// name keep their relative occurrence order (list order breaks ties)
    /// and are renumbered from 1. List order is unchanged.
    pub fn renumbered(mut objects: Vec<SceneObject>) -> Self {
        let mut by_name: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, o) in objects.iter().enumerate() {
            by_name.entry(o.name.clone()).or_default().push(i);
        }
        for idxs in by_name.into_values() {
            let mut sorted = idxs.clone();
            sorted.sort_by_key(|&i| objects[i].occurrence);
            for (k, i) in sorted.into_iter().enumerate() {
                objects[i].occurrence = k as u32 + 1;
            }
        }
        Self { objects }
    }

    /// Set equality over (name, occurrence, box), ignoring list order.
    pub fn same_objects(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.objects.iter().all(|o| {
                other
                    .get(&o.name, o.occurrence)
                    .is_some_and(|p| p.bbox == o.bbox)
            })
    }
}

impl<'a> IntoIterator for &'a ObjectList {
    type Item = &'a SceneObject;
    type IntoIter = std::slice::Iter<'a, SceneObject>;

    fn into_iter(self) -> Self::IntoIter {
        self.objects.iter()
    }
}

impl fmt::Display for ObjectList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_object_list(self))
    }
}

/// Numbers repeated names 1..k in input order after normalizing names.
pub fn assign_occurrences<S: AsRef<str>>(
    raw: impl IntoIterator<Item = (S, BoundingBox)>,
) -> ObjectList {
    let mut counts: HashMap<String, u32> = HashMap::new();
    let objects = raw
        .into_iter()
        .map(|(name, bbox)| {
            let name = normalize_label(name.as_ref());
            let k = counts.entry(name.clone()).or_insert(0);
            *k += 1;
            SceneObject {
                name,
                occurrence: *k,
                bbox,
            }
        })
        .collect();
    ObjectList { objects }
}

/// Canonical text: single quotes (double when the name itself contains a
/// single quote), `#k` always present, three decimals per coordinate.
pub fn serialize_object_list(list: &ObjectList) -> String {
    let items: Vec<String> = list
        .objects
        .iter()
        .map(|o| {
            let tag = o.tag();
            let quoted = if tag.contains('\'') {
                format!("\"{tag}\"")
            } else {
                format!("'{tag}'")
            };
            format!("({quoted}, {})", o.bbox.fmt_canonical())
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// Parses the bracketed tuple-list format. Accepts either quote style,
/// a missing `#k` (occurrence 1), and a missing opening parenthesis or box
/// bracket on an item, as produced by hand-written and model-written lists.
pub fn parse_object_list(text: &str) -> Result<ObjectList, BoxError> {
    let mut p = Parser { src: text, pos: 0 };
    let objects = p.list()?;
    ObjectList::new(objects)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), BoxError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{c}`")))
        }
    }

    fn syntax(&mut self, message: String) -> BoxError {
        let found = self
            .peek()
            .map_or_else(|| "end of input".to_string(), |c| format!("`{c}`"));
        BoxError::Syntax {
            offset: self.pos,
            message: format!("{message}, found {found}"),
        }
    }

    fn list(&mut self) -> Result<Vec<SceneObject>, BoxError> {
        self.expect('[')?;
        let mut out = Vec::new();
        if !self.eat(']') {
            loop {
                out.push(self.item()?);
                if self.eat(',') {
                    if self.eat(']') {
                        break;
                    }
                    continue;
                }
                self.expect(']')?;
                break;
            }
        }
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.syntax("trailing input after list".into()));
        }
        Ok(out)
    }

    fn item(&mut self) -> Result<SceneObject, BoxError> {
        let paren = self.eat('(');
        let tag = self.quoted()?;
        self.expect(',')?;
        let bracket = self.eat('[');
        let mut coords = [0.0; 4];
        for (i, c) in coords.iter_mut().enumerate() {
            if i > 0 {
                self.expect(',')?;
            }
            *c = self.number()?;
        }
        if bracket {
            self.expect(']')?;
        } else {
            self.eat(']');
        }
        if paren {
            self.expect(')')?;
        } else {
            self.eat(')');
        }
        let (name, occurrence) = split_tag(&tag);
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])?;
        let name = normalize_label(name);
        if name.is_empty() {
            return Err(BoxError::EmptyName);
        }
        Ok(SceneObject {
            name,
            occurrence,
            bbox,
        })
    }

    fn quoted(&mut self) -> Result<String, BoxError> {
        let q = match self.peek() {
            Some(c @ ('\'' | '"')) => c,
            _ => return Err(self.syntax("expected a quoted object name".into())),
        };
        let start = self.pos + 1;
        match self.src[start..].find(q) {
            Some(len) => {
                self.pos = start + len + 1;
                Ok(self.src[start..start + len].to_string())
            }
            None => Err(BoxError::Syntax {
                offset: self.pos,
                message: "unterminated quoted name".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<f64, BoxError> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| matches!(c, ',' | ']' | ')' | '[' | '(') || c.is_whitespace())
            .unwrap_or(self.rest().len());
        let token = &self.src[start..start + len];
        if token.is_empty() {
            return Err(self.syntax("expected a coordinate".into()));
        }
        let value: f64 = token.parse().map_err(|_| BoxError::NonNumeric {
            offset: start,
            found: token.to_string(),
        })?;
        if !value.is_finite() {
            return Err(BoxError::NonNumeric {
                offset: start,
                found: token.to_string(),
            });
        }
        self.pos = start + len;
        Ok(value)
    }
}

/// Splits `name #k`; without a valid suffix the occurrence is 1.
fn split_tag(tag: &str) -> (&str, u32) {
    if let Some(idx) = tag.rfind('#') {
        if let Ok(k) = tag[idx + 1..].trim().parse::<u32>() {
            if k > 0 {
                return (tag[..idx].trim(), k);
            }
        }
    }
    (tag.trim(), 1)
}
