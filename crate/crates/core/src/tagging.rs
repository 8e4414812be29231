//! Tag schemes and conversion between tag sequences and typed spans.
//!
//! Two schemes are supported:
//!
//! - **Unified sentiment**: `O, POS, NEU, NEG`. An aspect is a maximal run of
//!   one identical non-`O` tag, so a change of sentiment ends the span.
//! - **BIO**: `O` plus `B-X`/`I-X` for every entity type `X`. Decoding is
//!   lenient: an `I-X` that does not continue an `X` span opens a new one.
//!
//! Spans are 0-based and end-exclusive.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a tag inside its [`TagScheme`].
pub type TagId = usize;

/// Index of the outside tag in every scheme.
pub const OUTSIDE: TagId = 0;

/// Entity types of the standard NER tag set.
pub const NER_TYPES: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];

/// Single entity type used for aspect term extraction.
pub const ASPECT_TYPE: &str = "ASP";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("tag index {index} at position {position} is out of range for {num_tags} tags")]
    OutOfRange {
        position: usize,
        index: TagId,
        num_tags: usize,
    },
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("spans {first:?} and {second:?} overlap")]
    Overlap { first: Span, second: Span },
    #[error("span {span:?} does not fit a sentence of length {length}")]
    SpanOutOfBounds { span: Span, length: usize },
    #[error("label {label:?} has no tag in the {scheme} scheme")]
    Unmappable { label: String, scheme: SchemeKind },
    #[error("invalid tag scheme: {0}")]
    InvalidScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    UnifiedSentiment,
    #[serde(rename = "BIO")]
    Bio,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::UnifiedSentiment => f.write_str("unified"),
            SchemeKind::Bio => f.write_str("BIO"),
        }
    }
}

/// An ordered tag alphabet. The outside tag `O` is always index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    kind: SchemeKind,
    tags: Vec<String>,
}

impl TagScheme {
    /// `O, POS, NEU, NEG`.
    pub fn unified() -> Self {
        Self {
            kind: SchemeKind::UnifiedSentiment,
            tags: ["O", "POS", "NEU", "NEG"].map(String::from).to_vec(),
        }
    }

    /// BIO over `PER, ORG, LOC, MISC`.
    pub fn bio_ner() -> Self {
        Self::bio(&NER_TYPES).expect("static NER types are valid")
    }

    /// BIO with the single `ASP` type used for aspect term extraction.
    pub fn ate_bio() -> Self {
        Self::bio(&[ASPECT_TYPE]).expect("static aspect type is valid")
    }

    /// BIO over arbitrary entity types, `O` first and then `B-X, I-X` per type.
    pub fn bio(types: &[&str]) -> Result<Self, TagError> {
        let mut tags = vec!["O".to_string()];
        for ty in types {
            if ty.is_empty() || *ty == "O" || ty.contains(char::is_whitespace) {
                return Err(TagError::InvalidScheme(format!("bad entity type {ty:?}")));
            }
            tags.push(format!("B-{ty}"));
            tags.push(format!("I-{ty}"));
        }
        let scheme = Self {
            kind: SchemeKind::Bio,
            tags,
        };
        scheme.check_unique()?;
        Ok(scheme)
    }

    fn check_unique(&self) -> Result<(), TagError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tags {
            if !seen.insert(t) {
                return Err(TagError::InvalidScheme(format!("duplicate tag {t:?}")));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn tag_name(&self, id: TagId) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }

    pub fn tag_id(&self, name: &str) -> Option<TagId> {
        self.tags.iter().position(|t| t == name)
    }

    /// Span label carried by a tag: the sentiment for the unified scheme,
    /// the entity type for BIO, `None` for `O`.
    pub fn label_of(&self, id: TagId) -> Option<&str> {
        if id == OUTSIDE {
            return None;
        }
        let name = self.tag_name(id)?;
        match self.kind {
            SchemeKind::UnifiedSentiment => Some(name),
            SchemeKind::Bio => name.get(2..),
        }
    }

    /// Span labels of this scheme in tag order.
    pub fn labels(&self) -> Vec<&str> {
        (1..self.num_tags())
            .filter_map(|id| match self.kind {
                SchemeKind::UnifiedSentiment => self.label_of(id),
                SchemeKind::Bio if self.tags[id].starts_with("B-") => self.label_of(id),
                SchemeKind::Bio => None,
            })
            .collect()
    }

    fn is_begin(&self, id: TagId) -> bool {
        self.kind == SchemeKind::Bio && self.tags[id].starts_with("B-")
    }

    fn tag_for(&self, label: &str, begin: bool) -> Option<TagId> {
        match self.kind {
            SchemeKind::UnifiedSentiment => self.tag_id(label).filter(|&id| id != OUTSIDE),
            SchemeKind::Bio => {
                let prefix = if begin { "B-" } else { "I-" };
                self.tag_id(&format!("{prefix}{label}"))
            }
        }
    }

    /// Parse a sequence of tag names.
    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<TagId>, TagError> {
        names
            .iter()
            .map(|n| {
                self.tag_id(n.as_ref())
                    .ok_or_else(|| TagError::UnknownTag(n.as_ref().to_string()))
            })
            .collect()
    }

    /// Render tag ids as names. Panics on out-of-range ids.
    pub fn decode(&self, tags: &[TagId]) -> Vec<&str> {
        tags.iter().map(|&t| self.tags[t].as_str()).collect()
    }
}

/// A typed token range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

fn check_range(tags: &[TagId], scheme: &TagScheme) -> Result<(), TagError> {
    let num_tags = scheme.num_tags();
    match tags.iter().position(|&t| t >= num_tags) {
        Some(position) => Err(TagError::OutOfRange {
            position,
            index: tags[position],
            num_tags,
        }),
        None => Ok(()),
    }
}

/// Decode a tag sequence into spans sorted by start.
pub fn extract_spans(tags: &[TagId], scheme: &TagScheme) -> Result<Vec<Span>, TagError> {
    check_range(tags, scheme)?;
    let mut spans = Vec::new();
    // (start, label) of the span currently being built
    let mut open: Option<(usize, &str)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let label = scheme.label_of(tag);
        let continues = match (open, label) {
            (Some((_, cur)), Some(l)) => cur == l && !scheme.is_begin(tag),
            _ => false,
        };
        if continues {
            continue;
        }
        if let Some((start, cur)) = open.take() {
            spans.push(Span::new(start, i, cur));
        }
        open = label.map(|l| (i, l));
    }
    if let Some((start, cur)) = open {
        spans.push(Span::new(start, tags.len(), cur));
    }
    Ok(spans)
}

/// Render spans as a tag sequence of the given length.
pub fn spans_to_tags(
    spans: &[Span],
    length: usize,
    scheme: &TagScheme,
) -> Result<Vec<TagId>, TagError> {
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort();
    for span in &sorted {
        if span.is_empty() || span.end > length {
            return Err(TagError::SpanOutOfBounds {
                span: (*span).clone(),
                length,
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(TagError::Overlap {
                first: pair[0].clone(),
                second: pair[1].clone(),
            });
        }
    }
    let mut tags = vec![OUTSIDE; length];
    for span in sorted {
        let unmappable = || TagError::Unmappable {
            label: span.label.clone(),
            scheme: scheme.kind(),
        };
        let begin = scheme.tag_for(&span.label, true).ok_or_else(unmappable)?;
        let inside = scheme.tag_for(&span.label, false).ok_or_else(unmappable)?;
        tags[span.start] = begin;
        for t in &mut tags[span.start + 1..span.end] {
            *t = inside;
        }
    }
    Ok(tags)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Issue {
    OutOfRange { position: usize, index: TagId },
    OrphanInside { position: usize, tag: String },
}

/// Result of [`validate_sequence`]. Errors make a sequence unusable;
/// warnings are tolerated by lenient decoding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

pub fn validate_sequence(tags: &[TagId], scheme: &TagScheme) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut prev: Option<&str> = None;
    for (position, &index) in tags.iter().enumerate() {
        if index >= scheme.num_tags() {
            report.errors.push(Issue::OutOfRange { position, index });
            prev = None;
            continue;
        }
        let label = scheme.label_of(index);
        if scheme.kind() == SchemeKind::Bio
            && index != OUTSIDE
            && !scheme.is_begin(index)
            && prev != label
        {
            report.warnings.push(Issue::OrphanInside {
                position,
                tag: scheme.tags[index].clone(),
            });
        }
        prev = label;
    }
    report
}

/// How span labels are renamed when moving between schemes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelMap {
    /// Keep labels unchanged.
    Identity,
    /// Every label becomes the given one (ATE collapses sentiments to `ASP`).
    Collapse(String),
    /// Explicit renaming; labels missing from the table are errors.
    Table(HashMap<String, String>),
}

impl LabelMap {
    pub fn aspect() -> Self {
        LabelMap::Collapse(ASPECT_TYPE.to_string())
    }

    fn apply<'a>(&'a self, label: &'a str) -> Option<&'a str> {
        match self {
            LabelMap::Identity => Some(label),
            LabelMap::Collapse(to) => Some(to),
            LabelMap::Table(table) => table.get(label).map(String::as_str),
        }
    }
}

/// Re-tag a sequence in another scheme, going through spans so that every
/// `(start, end)` range is preserved.
pub fn convert_scheme(
    tags: &[TagId],
    from: &TagScheme,
    to: &TagScheme,
    map: &LabelMap,
) -> Result<Vec<TagId>, TagError> {
    let spans = extract_spans(tags, from)?;
    let mut out = vec![OUTSIDE; tags.len()];
    for span in &spans {
        let unmappable = || TagError::Unmappable {
            label: span.label.clone(),
            scheme: to.kind(),
        };
        let label = map.apply(&span.label).ok_or_else(unmappable)?;
        let begin = to.tag_for(label, true).ok_or_else(unmappable)?;
        let inside = to.tag_for(label, false).ok_or_else(unmappable)?;
        out[span.start] = begin;
        for t in &mut out[span.start + 1..span.end] {
            *t = inside;
        }
    }
    // Adjacent same-label spans merge under the unified scheme; report that
    // as an error instead of silently changing the span set.
    if to.kind() == SchemeKind::UnifiedSentiment {
        let back = extract_spans(&out, to)?;
        if back.len() != spans.len() {
            let first = spans
                .windows(2)
                .find(|w| w[0].end == w[1].start && map.apply(&w[0].label) == map.apply(&w[1].label))
                .map(|w| (w[0].clone(), w[1].clone()));
            if let Some((first, second)) = first {
                return Err(TagError::Overlap { first, second });
            }
        }
    }
    Ok(out)
}
