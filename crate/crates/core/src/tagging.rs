//! Per-byte IOBES tagging.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;
use crate::error::{Error, Result};

pub type TagId = usize;

/// Id of the outside tag. An all-zero sequence therefore carries no entities.
pub const OUTSIDE: TagId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Begin,
    Inside,
    End,
    Single,
}

impl Position {
    const ALL: [Position; 4] = [Position::Begin, Position::Inside, Position::End, Position::Single];

    fn prefix(self) -> char {
        match self {
            Position::Begin => 'B',
            Position::Inside => 'I',
            Position::End => 'E',
            Position::Single => 'S',
        }
    }
}

/// A decoded tag: outside, or a position within an entity of a given label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Entity { position: Position, label: usize },
}

/// IOBES tag inventory over an ordered label list.
///
/// Ids are `O = 0` followed by `B, I, E, S` for each label in turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SchemeRepr", into = "SchemeRepr")]
pub struct TagScheme {
    labels: Vec<String>,
    tags: Vec<String>,
    tag_of: HashMap<String, TagId>,
    label_of: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    labels: Vec<String>,
}

impl From<SchemeRepr> for TagScheme {
    fn from(repr: SchemeRepr) -> Self {
        TagScheme::new(repr.labels)
    }
}

impl From<TagScheme> for SchemeRepr {
    fn from(scheme: TagScheme) -> Self {
        SchemeRepr {
            labels: scheme.labels,
        }
    }
}

impl TagScheme {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut tags = vec!["O".to_owned()];
        for label in &labels {
            for pos in Position::ALL {
                tags.push(format!("{}-{}", pos.prefix(), label));
            }
        }
        let tag_of = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let label_of = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        TagScheme {
            labels,
            tags,
            tag_of,
            label_of,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn tag_id(&self, tag: &str) -> Option<TagId> {
        self.tag_of.get(tag).copied()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_of.get(label).copied()
    }

    pub fn id_of(&self, position: Position, label: usize) -> TagId {
        let offset = match position {
            Position::Begin => 1,
            Position::Inside => 2,
            Position::End => 3,
            Position::Single => 4,
        };
        4 * label + offset
    }

    /// Interprets an id. Ids beyond the scheme are treated as outside.
    pub fn tag(&self, id: TagId) -> Tag {
        if id == OUTSIDE || id >= self.tags.len() {
            return Tag::Outside;
        }
        let label = (id - 1) / 4;
        let position = Position::ALL[(id - 1) % 4];
        Tag::Entity { position, label }
    }
}

/// Encodes spans as one tag per byte. Spans must be in bounds and
/// non-overlapping, but need not be sorted.
pub fn encode_iobes(len: usize, spans: &[EntitySpan], scheme: &TagScheme) -> Result<Vec<TagId>> {
    let mut tags = vec![OUTSIDE; len];
    for span in spans {
        let label = scheme
            .label_id(&span.entity_type)
            .ok_or_else(|| Error::UnknownEntityType(span.entity_type.clone()))?;
        if span.start >= span.end || span.end > len {
            return Err(Error::SpanOutOfBounds {
                doc_id: String::new(),
                start: span.start,
                end: span.end,
                len,
            });
        }
        if let Some(pos) = (span.start..span.end).find(|&i| tags[i] != OUTSIDE) {
            return Err(Error::OverlappingSpans {
                doc_id: String::new(),
                a_start: pos,
                a_end: pos + 1,
                b_start: span.start,
                b_end: span.end,
            });
        }
        if span.len() == 1 {
            tags[span.start] = scheme.id_of(Position::Single, label);
        } else {
            tags[span.start] = scheme.id_of(Position::Begin, label);
            for tag in &mut tags[span.start + 1..span.end - 1] {
                *tag = scheme.id_of(Position::Inside, label);
            }
            tags[span.end - 1] = scheme.id_of(Position::End, label);
        }
    }
    Ok(tags)
}

/// Decodes any tag sequence into spans, sorted by start.
///
/// Malformed runs are repaired: an entity opens at `B`/`S`, or at an `I`/`E`
/// that does not continue an open entity of the same label; it closes at `E`,
/// at `S`, or as soon as the continuation breaks.
pub fn decode_iobes(tags: &[TagId], scheme: &TagScheme) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    // (start, label) of the entity being extended
    let mut open: Option<(usize, usize)> = None;
    let close = |open: &mut Option<(usize, usize)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((start, label)) = open.take() {
            spans.push(EntitySpan::new(start, end, scheme.labels[label].clone()));
        }
    };
    for (i, &id) in tags.iter().enumerate() {
        match scheme.tag(id) {
            Tag::Outside => close(&mut open, i, &mut spans),
            Tag::Entity { position, label } => {
                let continues = matches!(open, Some((_, l)) if l == label);
                match position {
                    Position::Begin => {
                        close(&mut open, i, &mut spans);
                        open = Some((i, label));
                    }
                    Position::Single => {
                        close(&mut open, i, &mut spans);
                        spans.push(EntitySpan::new(i, i + 1, scheme.labels[label].clone()));
                    }
                    Position::Inside => {
                        if !continues {
                            close(&mut open, i, &mut spans);
                            open = Some((i, label));
                        }
                    }
                    Position::End => {
                        if !continues {
                            close(&mut open, i, &mut spans);
                            open = Some((i, label));
                        }
                        close(&mut open, i + 1, &mut spans);
                    }
                }
            }
        }
    }
    close(&mut open, tags.len(), &mut spans);
    spans
}
