use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::AnnotatedDocument;
use crate::ontology::{Ontology, SeverityLabel};
use crate::textproc::TokenizedDocument;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow {
    pub characteristic: String,
    pub cases: usize,
    /// Documents with any label other than `NoLabel`.
    pub any_label: usize,
    /// Counts for every admissible label except `NoLabel`.
    pub counts: Vec<(SeverityLabel, usize)>,
}

impl LabelRow {
    pub fn percent(&self, count: usize) -> f64 {
        if self.cases == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.cases as f64
        }
    }

    pub fn count(&self, label: SeverityLabel) -> usize {
        self.counts
            .iter()
            .find(|(l, _)| *l == label)
            .map_or(0, |(_, c)| *c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub rows: Vec<LabelRow>,
}

impl LabelDistribution {
    pub fn row(&self, characteristic: &str) -> Option<&LabelRow> {
        self.rows
            .iter()
            .find(|r| r.characteristic == characteristic)
    }

    /// CSV with header `characteristic,label,count,percent`; the `Any` row
    /// counts documents with any statement.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("characteristic,label,count,percent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},Any,{},{:.1}",
                r.characteristic,
                r.any_label,
                r.percent(r.any_label)
            );
            for (label, count) in &r.counts {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.1}",
                    r.characteristic,
                    label,
                    count,
                    r.percent(*count)
                );
            }
        }
        out
    }
}

/// Document label counts per characteristic; every document is a case.
pub fn label_distribution(docs: &[AnnotatedDocument], ontology: &Ontology) -> LabelDistribution {
    let rows = ontology
        .characteristics
        .iter()
        .map(|c| {
            let mut counts: Vec<(SeverityLabel, usize)> = c
                .labels
                .iter()
                .filter(|&&l| l != SeverityLabel::NoLabel)
                .map(|&l| (l, 0))
                .collect();
            let mut any_label = 0;
            for d in docs {
                let label = d.doc_label(&c.id);
                if label == SeverityLabel::NoLabel {
                    continue;
                }
                any_label += 1;
                if let Some(slot) = counts.iter_mut().find(|(l, _)| *l == label) {
                    slot.1 += 1;
                }
            }
            LabelRow {
                characteristic: c.id.clone(),
                cases: docs.len(),
                any_label,
                counts,
            }
        })
        .collect();
    LabelDistribution { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanStatRow {
    pub characteristic: String,
    /// `None` for the overall row of a characteristic.
    pub severity: Option<SeverityLabel>,
    pub count: usize,
    pub mean_len: f64,
    pub sd: f64,
    pub bd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanStats {
    pub rows: Vec<SpanStatRow>,
}

impl SpanStats {
    pub fn row(
        &self,
        characteristic: &str,
        severity: Option<SeverityLabel>,
    ) -> Option<&SpanStatRow> {
        self.rows
            .iter()
            .find(|r| r.characteristic == characteristic && r.severity == severity)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("characteristic,severity,count,mean_len,sd,bd\n");
        for r in &self.rows {
            let severity = r.severity.map_or("Overall", SeverityLabel::as_str);
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{:.2},{:.2}",
                r.characteristic, severity, r.count, r.mean_len, r.sd, r.bd
            );
        }
        out
    }
}

type Counts = HashMap<String, usize>;

/// KL divergence of `inner` from `background`, both add-one smoothed over
/// the background vocabulary.
fn smoothed_kl(inner: &Counts, background: &Counts) -> f64 {
    let vocab = background.len() as f64;
    let n_inner: usize = inner.values().sum();
    let n_bg: usize = background.values().sum();
    background
        .iter()
        .map(|(w, &bg)| {
            let p = (inner.get(w).copied().unwrap_or(0) as f64 + 1.0) / (n_inner as f64 + vocab);
            let q = (bg as f64 + 1.0) / (n_bg as f64 + vocab);
            p * (p / q).ln()
        })
        .sum()
}

#[derive(Default)]
struct ClassAcc {
    count: usize,
    total_len: usize,
    inner: Counts,
    boundary: Counts,
}

impl ClassAcc {
    fn add(&mut self, doc: &TokenizedDocument, range: std::ops::Range<usize>) {
        self.count += 1;
        self.total_len += range.len();
        for t in &doc.tokens[range.clone()] {
            *self.inner.entry(t.norm.clone()).or_default() += 1;
        }
        *self
            .boundary
            .entry(doc.tokens[range.start].norm.clone())
            .or_default() += 1;
        if range.len() > 1 {
            *self
                .boundary
                .entry(doc.tokens[range.end - 1].norm.clone())
                .or_default() += 1;
        }
    }

    fn row(
        &self,
        characteristic: &str,
        severity: Option<SeverityLabel>,
        bg: &Counts,
    ) -> SpanStatRow {
        SpanStatRow {
            characteristic: characteristic.to_string(),
            severity,
            count: self.count,
            mean_len: self.total_len as f64 / self.count as f64,
            sd: smoothed_kl(&self.inner, bg),
            bd: smoothed_kl(&self.boundary, bg),
        }
    }
}

/// Span counts, mean token length, span distinctiveness (SD) and boundary
/// distinctiveness (BD) per characteristic and severity.
///
/// SD is the KL divergence between the unigram distribution of tokens inside
/// the spans of a class and the whole-corpus unigram distribution. BD uses
/// only the first and last token of each span.
pub fn span_stats(docs: &[AnnotatedDocument], ontology: &Ontology) -> SpanStats {
    let tokenized: Vec<TokenizedDocument> = docs.iter().map(AnnotatedDocument::tokenize).collect();
    let mut background = Counts::new();
    for doc in &tokenized {
        for t in &doc.tokens {
            *background.entry(t.norm.clone()).or_default() += 1;
        }
    }

    let mut rows = Vec::new();
    for c in &ontology.characteristics {
        let mut overall = ClassAcc::default();
        let mut per_label: Vec<(SeverityLabel, ClassAcc)> = c
            .labels
            .iter()
            .filter(|&&l| l != SeverityLabel::NoLabel)
            .map(|&l| (l, ClassAcc::default()))
            .collect();
        for (doc, tok) in docs.iter().zip(&tokenized) {
            for s in doc.spans_for(&c.id) {
                let Some(range) = tok.token_range(s.start, s.end) else {
                    continue;
                };
                overall.add(tok, range.clone());
                if let Some((_, acc)) = per_label.iter_mut().find(|(l, _)| *l == s.label) {
                    acc.add(tok, range);
                }
            }
        }
        if overall.count == 0 {
            continue;
        }
        rows.push(overall.row(&c.id, None, &background));
        for (label, acc) in &per_label {
            if acc.count > 0 {
                rows.push(acc.row(&c.id, Some(*label), &background));
            }
        }
    }
    SpanStats { rows }
}
