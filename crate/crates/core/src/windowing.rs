//! Fixed-length byte windows.
//!
//! Training windows are shifted so they never cut an entity. Inference windows
//! slide freely, and their per-byte predictions are stitched by cutting each
//! overlap at its midpoint.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntitySpan};
use crate::error::{Error, Result};
use crate::tagging::{encode_iobes, TagId, TagScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub window_len: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: 150,
            stride: 75,
        }
    }
}

impl WindowConfig {
    pub fn new(window_len: usize, stride: usize) -> Result<Self> {
        let cfg = WindowConfig { window_len, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.window_len {
            return Err(Error::InvalidArgument(format!(
                "window stride must satisfy 0 < stride <= window_len, got stride {} for window {}",
                self.stride, self.window_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub doc_id: String,
    pub doc_offset: usize,
    pub bytes: Vec<u8>,
    pub tags: Option<Vec<TagId>>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn end(&self) -> usize {
        self.doc_offset + self.bytes.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingWindows {
    pub samples: Vec<Sample>,
    /// Entities longer than the window, which no window can hold.
    pub skipped_entities: Vec<EntitySpan>,
}

fn strictly_inside(spans: &[EntitySpan], pos: usize) -> Option<&EntitySpan> {
    // spans are sorted and disjoint: the only candidate is the last span
    // starting before `pos`
    let idx = spans.partition_point(|s| s.start < pos);
    idx.checked_sub(1)
        .map(|i| &spans[i])
        .filter(|s| s.start < pos && pos < s.end)
}

/// Cuts a labelled document into training windows at candidate offsets
/// `0, stride, 2*stride, ...`.
///
/// A start falling inside an entity moves back to the entity start; an end
/// falling inside an entity is pulled back to the entity start. Windows
/// contained in the previously emitted window are dropped.
pub fn extract_training_windows(
    doc: &Document,
    cfg: &WindowConfig,
    scheme: &TagScheme,
) -> Result<TrainingWindows> {
    cfg.validate()?;
    let len = doc.len();
    let mut out = TrainingWindows::default();
    let mut skipped = BTreeSet::new();
    let mut prev: Option<(usize, usize)> = None;
    let mut candidate = 0;
    while candidate < len {
        let mut start = candidate;
        if let Some(span) = strictly_inside(&doc.spans, start) {
            start = span.start;
        }
        let mut end = (start + cfg.window_len).min(len);
        if let Some(span) = strictly_inside(&doc.spans, end) {
            end = span.start;
            if end <= start {
                skipped.insert(span.clone());
                candidate += cfg.stride;
                continue;
            }
        }
        let contained = matches!(prev, Some((ps, pe)) if ps <= start && end <= pe);
        if !contained {
            let spans: Vec<EntitySpan> = doc
                .spans
                .iter()
                .filter(|s| start <= s.start && s.end <= end)
                .map(|s| EntitySpan::new(s.start - start, s.end - start, s.entity_type.clone()))
                .collect();
            let tags = encode_iobes(end - start, &spans, scheme)?;
            out.samples.push(Sample {
                doc_id: doc.doc_id.clone(),
                doc_offset: start,
                bytes: doc.bytes[start..end].to_vec(),
                tags: Some(tags),
            });
            prev = Some((start, end));
        }
        candidate += cfg.stride;
    }
    if !skipped.is_empty() {
        warn!(
            "document {}: skipped {} entities longer than the {}-byte window",
            doc.doc_id,
            skipped.len(),
            cfg.window_len
        );
    }
    out.skipped_entities = skipped.into_iter().collect();
    Ok(out)
}

/// Offsets `[start, end)` of the sliding windows over `len` bytes. The last
/// window is the first one to reach the end of the document.
pub fn inference_window_bounds(len: usize, cfg: &WindowConfig) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + cfg.window_len).min(len);
        bounds.push((start, end));
        if end == len {
            break;
        }
        start += cfg.stride;
    }
    bounds
}

/// Unconstrained sliding windows; every byte lies in at least one window.
/// Gold tags are attached when `scheme` is given.
pub fn extract_inference_windows(
    doc: &Document,
    cfg: &WindowConfig,
    scheme: Option<&TagScheme>,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let doc_tags = scheme
        .map(|s| encode_iobes(doc.len(), &doc.spans, s))
        .transpose()?;
    Ok(inference_window_bounds(doc.len(), cfg)
        .into_iter()
        .map(|(start, end)| Sample {
            doc_id: doc.doc_id.clone(),
            doc_offset: start,
            bytes: doc.bytes[start..end].to_vec(),
            tags: doc_tags.as_ref().map(|t| t[start..end].to_vec()),
        })
        .collect())
}

/// Stitches per-window tags into one sequence of `doc_len` tags.
///
/// Windows must be sorted by offset and jointly cover `[0, doc_len)`. Each
/// overlap between consecutive windows is split at
/// `floor((overlap_start + overlap_end) / 2)`.
pub fn recombine_window_tags(doc_len: usize, windows: &[(usize, Vec<TagId>)]) -> Result<Vec<TagId>> {
    if doc_len == 0 {
        return Ok(Vec::new());
    }
    let first = windows.first().ok_or(Error::CoverageGap {
        start: 0,
        end: doc_len,
    })?;
    if first.0 > 0 {
        return Err(Error::CoverageGap {
            start: 0,
            end: first.0,
        });
    }
    let mut out = Vec::with_capacity(doc_len);
    for (i, (offset, tags)) in windows.iter().enumerate() {
        let end = offset + tags.len();
        let cut = match windows.get(i + 1) {
            Some((next_offset, _)) => {
                if *next_offset > end {
                    return Err(Error::CoverageGap {
                        start: end,
                        end: *next_offset,
                    });
                }
                (next_offset + end) / 2
            }
            None => end,
        };
        let cut = cut.min(doc_len);
        let from = out.len();
        if cut > from {
            out.extend_from_slice(&tags[from - offset..cut - offset]);
        }
    }
    if out.len() < doc_len {
        return Err(Error::CoverageGap {
            start: out.len(),
            end: doc_len,
        });
    }
    Ok(out)
}
