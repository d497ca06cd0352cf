//! Exact-match span scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl TypeScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TypeScores {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub gold: String,
    pub pred: String,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, TypeScores>,
    pub micro: TypeScores,
    /// Wrong-type predictions overlapping a gold span, by (gold, predicted) type.
    pub confusion: Vec<ConfusionEntry>,
}

impl EvalReport {
    pub fn confusion_count(&self, gold: &str, pred: &str) -> usize {
        self.confusion
            .iter()
            .find(|e| e.gold == gold && e.pred == pred)
            .map_or(0, |e| e.count)
    }

    /// Fixed-width table: one row per type, then the micro total.
    pub fn to_table(&self) -> String {
        let width = self
            .per_type
            .keys()
            .map(String::len)
            .chain(["Entity type".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6} {:>6} {:>6}  {:>9} {:>9} {:>9}",
            "Entity type", "tp", "fp", "fn", "precision", "recall", "F1"
        );
        let mut row = |name: &str, s: &TypeScores| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6} {:>6} {:>6}  {:>9.2} {:>9.2} {:>9.2}",
                name,
                s.tp,
                s.fp,
                s.fn_,
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            );
        };
        for (name, s) in &self.per_type {
            row(name, s);
        }
        row("Total", &self.micro);
        if !self.confusion.is_empty() {
            let _ = writeln!(out, "\nType confusion (gold -> predicted):");
            for e in &self.confusion {
                let _ = writeln!(out, "  {} -> {}: {}", e.gold, e.pred, e.count);
            }
        }
        out
    }
}

fn check_doc_ids(
    gold: &HashMap<String, Vec<EntitySpan>>,
    pred: &HashMap<String, Vec<EntitySpan>>,
) -> Result<()> {
    let g: BTreeSet<&String> = gold.keys().collect();
    let p: BTreeSet<&String> = pred.keys().collect();
    if g != p {
        let missing: Vec<_> = g.difference(&p).take(3).collect();
        let extra: Vec<_> = p.difference(&g).take(3).collect();
        return Err(Error::DocumentMismatch(format!(
            "missing predictions for {missing:?}, unexpected predictions for {extra:?}"
        )));
    }
    Ok(())
}

/// Scores predictions against gold spans. A prediction is a true positive
/// when an unmatched gold span has the same start, end and type; matching
/// is greedy in document order.
pub fn score(
    gold: &HashMap<String, Vec<EntitySpan>>,
    pred: &HashMap<String, Vec<EntitySpan>>,
) -> Result<EvalReport> {
    check_doc_ids(gold, pred)?;
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut doc_ids: Vec<&String> = gold.keys().collect();
    doc_ids.sort();
    for id in doc_ids {
        let mut gold_spans = gold[id].clone();
        gold_spans.sort();
        let mut pred_spans = pred[id].clone();
        pred_spans.sort();
        let mut matched = vec![false; gold_spans.len()];
        for p in &pred_spans {
            let hit = gold_spans
                .iter()
                .enumerate()
                .find(|(i, g)| !matched[*i] && *g == p)
                .map(|(i, _)| i);
            let entry = counts.entry(p.entity_type.clone()).or_default();
            match hit {
                Some(i) => {
                    matched[i] = true;
                    entry.0 += 1;
                }
                None => entry.1 += 1,
            }
        }
        for (g, m) in gold_spans.iter().zip(&matched) {
            if !m {
                counts.entry(g.entity_type.clone()).or_default().2 += 1;
            }
        }
    }
    let per_type: BTreeMap<String, TypeScores> = counts
        .into_iter()
        .map(|(t, (tp, fp, fn_))| (t, TypeScores::from_counts(tp, fp, fn_)))
        .collect();
    let (tp, fp, fn_) = per_type
        .values()
        .fold((0, 0, 0), |acc, s| (acc.0 + s.tp, acc.1 + s.fp, acc.2 + s.fn_));
    Ok(EvalReport {
        per_type,
        micro: TypeScores::from_counts(tp, fp, fn_),
        confusion: confusion_by_type(gold, pred)?,
    })
}

/// For every false-positive prediction, counts each gold span of a different
/// type it shares at least one byte with.
pub fn confusion_by_type(
    gold: &HashMap<String, Vec<EntitySpan>>,
    pred: &HashMap<String, Vec<EntitySpan>>,
) -> Result<Vec<ConfusionEntry>> {
    check_doc_ids(gold, pred)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (id, gold_spans) in gold {
        for p in &pred[id] {
            if gold_spans.contains(p) {
                continue;
            }
            for g in gold_spans {
                if g.entity_type != p.entity_type && g.overlaps(p) {
                    *counts
                        .entry((g.entity_type.clone(), p.entity_type.clone()))
                        .or_insert(0) += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|((gold, pred), count)| ConfusionEntry { gold, pred, count })
        .collect())
}
