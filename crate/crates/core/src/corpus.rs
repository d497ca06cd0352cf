//! Corpus ingestion and prediction output.
//!
//! Two input formats are supported. The canonical one is JSON Lines, one
//! document per line:
//!
//! ```text
//! {"doc_id": "d1", "text": "AB binds", "spans": [{"start": 0, "end": 2, "type": "protein"}]}
//! ```
//!
//! `start`/`end` are byte offsets into the UTF-8 encoding of `text`. The second
//! is a token-per-line IOB format (`token<TAB>tag`, blank line between
//! sentences) which is converted to byte offsets by joining tokens with a
//! single space.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A typed entity mention covering bytes `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when the two spans share at least one byte.
    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub bytes: Vec<u8>,
    /// Sorted by start, pairwise non-overlapping.
    pub spans: Vec<EntitySpan>,
}

impl Document {
    /// Builds a document, sorting and validating its spans.
    pub fn new(doc_id: impl Into<String>, bytes: Vec<u8>, mut spans: Vec<EntitySpan>) -> Result<Self> {
        let doc_id = doc_id.into();
        spans.sort();
        validate_spans(&doc_id, bytes.len(), &spans)?;
        Ok(Document {
            doc_id,
            bytes,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Checks bounds and non-overlap of spans already sorted by start.
pub fn validate_spans(doc_id: &str, len: usize, spans: &[EntitySpan]) -> Result<()> {
    for span in spans {
        if span.start >= span.end || span.end > len {
            return Err(Error::SpanOutOfBounds {
                doc_id: doc_id.to_owned(),
                start: span.start,
                end: span.end,
                len,
            });
        }
    }
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::OverlappingSpans {
                doc_id: doc_id.to_owned(),
                a_start: pair[0].start,
                a_end: pair[0].end,
                b_start: pair[1].start,
                b_end: pair[1].end,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub documents: Vec<Document>,
    /// Lexicographically sorted, no duplicates.
    pub label_set: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose label set is the sorted union of `extra_labels`
    /// and every type appearing in `documents`.
    pub fn new(documents: Vec<Document>, extra_labels: impl IntoIterator<Item = String>) -> Self {
        let mut labels: BTreeSet<String> = extra_labels.into_iter().collect();
        for doc in &documents {
            labels.extend(doc.spans.iter().map(|s| s.entity_type.clone()));
        }
        Dataset {
            documents,
            label_set: labels.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_spans(&self) -> usize {
        self.documents.iter().map(|d| d.spans.len()).sum()
    }

    /// Gold spans keyed by document id.
    pub fn spans_by_doc(&self) -> HashMap<String, Vec<EntitySpan>> {
        self.documents
            .iter()
            .map(|d| (d.doc_id.clone(), d.spans.clone()))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    doc_id: String,
    text: String,
    #[serde(default)]
    spans: Vec<EntitySpan>,
}

pub fn load_byte_offset_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_byte_offset_dataset(BufReader::new(file))
}

/// Parses JSON Lines documents. Blank lines are ignored; line numbers in
/// errors are 1-based.
pub fn read_byte_offset_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if !seen.insert(record.doc_id.clone()) {
            return Err(Error::parse(
                lineno,
                format!("duplicate doc_id {:?}", record.doc_id),
            ));
        }
        documents.push(Document::new(
            record.doc_id,
            record.text.into_bytes(),
            record.spans,
        )?);
    }
    Ok(Dataset::new(documents, []))
}

/// Counts of lenient repairs applied while reading token-IOB data.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IobRepairReport {
    /// Orphan `I-` tags rewritten to `B-`.
    pub repaired: usize,
    /// 1-based line numbers of the repaired tags.
    pub lines: Vec<usize>,
}

pub fn load_token_iob_dataset(path: impl AsRef<Path>) -> Result<(Dataset, IobRepairReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_token_iob_dataset(BufReader::new(file))
}

enum IobTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_iob_tag(tag: &str) -> Option<IobTag<'_>> {
    if tag == "O" {
        return Some(IobTag::Outside);
    }
    let (prefix, label) = tag.split_once('-')?;
    if label.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(IobTag::Begin(label)),
        "I" => Some(IobTag::Inside(label)),
        _ => None,
    }
}

#[derive(Default)]
struct SentenceBuilder {
    bytes: Vec<u8>,
    spans: Vec<EntitySpan>,
    open: Option<EntitySpan>,
}

impl SentenceBuilder {
    fn push(&mut self, token: &str, tag: IobTag<'_>, lineno: usize, report: &mut IobRepairReport) {
        if !self.bytes.is_empty() {
            self.bytes.push(b' ');
        }
        let start = self.bytes.len();
        self.bytes.extend_from_slice(token.as_bytes());
        let end = self.bytes.len();
        match tag {
            IobTag::Outside => self.close(),
            IobTag::Begin(label) => {
                self.close();
                self.open = Some(EntitySpan::new(start, end, label));
            }
            IobTag::Inside(label) => match &mut self.open {
                Some(open) if open.entity_type == label => open.end = end,
                _ => {
                    self.close();
                    report.repaired += 1;
                    report.lines.push(lineno);
                    self.open = Some(EntitySpan::new(start, end, label));
                }
            },
        }
    }

    fn close(&mut self) {
        if let Some(span) = self.open.take() {
            self.spans.push(span);
        }
    }

    fn finish(mut self, doc_id: String) -> Result<Document> {
        self.close();
        Document::new(doc_id, self.bytes, self.spans)
    }
}

/// Parses `token<TAB>tag` lines; each blank-line separated sentence becomes a
/// document with id `sent-<n>` (0-based).
pub fn read_token_iob_dataset<R: BufRead>(reader: R) -> Result<(Dataset, IobRepairReport)> {
    let mut report = IobRepairReport::default();
    let mut documents = Vec::new();
    let mut current: Option<SentenceBuilder> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(builder) = current.take() {
                let id = format!("sent-{}", documents.len());
                documents.push(builder.finish(id)?);
            }
            continue;
        }
        let (token, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected `token<TAB>tag`"))?;
        if token.is_empty() {
            return Err(Error::parse(lineno, "empty token"));
        }
        let tag = tag.trim();
        let parsed = parse_iob_tag(tag)
            .ok_or_else(|| Error::parse(lineno, format!("invalid IOB tag {tag:?}")))?;
        current
            .get_or_insert_with(SentenceBuilder::default)
            .push(token, parsed, lineno, &mut report);
    }
    if let Some(builder) = current.take() {
        let id = format!("sent-{}", documents.len());
        documents.push(builder.finish(id)?);
    }
    Ok((Dataset::new(documents, []), report))
}

/// Partitions documents into `(train, dev)` with `ceil(fraction * N)` dev
/// documents chosen by a seeded shuffle. Both halves keep the input order and
/// the full label set.
pub fn split_train_dev(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 documents to split, got {n}"
        )));
    }
    let n_dev = (fraction * n as f64).ceil() as usize;
    if n_dev >= n {
        return Err(Error::InvalidArgument(format!(
            "dev fraction {fraction} leaves no training documents out of {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..n_dev] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (doc, dev_flag) in dataset.documents.iter().zip(is_dev) {
        if dev_flag {
            dev.push(doc.clone());
        } else {
            train.push(doc.clone());
        }
    }
    let labels = dataset.label_set.clone();
    Ok((
        Dataset {
            documents: train,
            label_set: labels.clone(),
        },
        Dataset {
            documents: dev,
            label_set: labels,
        },
    ))
}

/// Writes one JSON Lines record per dataset document, in dataset order, with
/// the predicted spans. Documents without an entry get an empty span list.
pub fn write_predictions(
    dataset: &Dataset,
    predictions: &HashMap<String, Vec<EntitySpan>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_predictions_to(dataset, predictions, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_predictions_to<W: Write>(
    dataset: &Dataset,
    predictions: &HashMap<String, Vec<EntitySpan>>,
    out: &mut W,
) -> Result<()> {
    let known: HashSet<&str> = dataset.documents.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(unknown) = predictions.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::UnknownDocument(unknown.clone()));
    }
    for doc in &dataset.documents {
        let text = String::from_utf8(doc.bytes.clone()).map_err(|_| {
            Error::InvalidArgument(format!("document {} is not valid UTF-8", doc.doc_id))
        })?;
        let mut spans = predictions.get(&doc.doc_id).cloned().unwrap_or_default();
        spans.sort();
        let record = Record {
            doc_id: doc.doc_id.clone(),
            text,
            spans,
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

/// Writes the dataset's own gold spans in the JSON Lines format.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_predictions(dataset, &dataset.spans_by_doc(), path)
}
