//! Annotated report corpora: ingestion, filtering, splitting, statistics
//! and synthetic generation.

mod jsonl;
mod stats;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{aggregate_labels, LabelScheme, Ontology, SeverityLabel};
use crate::rules::RuleSet;
use crate::textproc::{tokenize_with_id, TokenizedDocument};

pub use jsonl::{ingest, ingest_sources, to_jsonl, write_jsonl};
pub use stats::{
    label_distribution, span_stats, LabelDistribution, LabelRow, SpanStatRow, SpanStats,
};
pub use synth::{generate_synthetic, Profile, SyntheticCorpus, Templates};

/// A labelled character range. `end` is exclusive; offsets count Unicode
/// scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub characteristic: String,
    pub label: SeverityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub spans: Vec<SpanAnnotation>,
    /// One entry per ontology characteristic, derived from `spans`.
    pub doc_labels: BTreeMap<String, SeverityLabel>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl AnnotatedDocument {
    /// Validates spans against the ontology and derives document labels.
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        mut spans: Vec<SpanAnnotation>,
        ontology: &Ontology,
    ) -> Result<AnnotatedDocument> {
        let doc_id = doc_id.into();
        let text = text.into();
        let len = text.chars().count();
        for s in &spans {
            if s.start >= s.end || s.end > len {
                return Err(Error::SpanOutOfBounds {
                    doc_id,
                    start: s.start,
                    end: s.end,
                    len,
                });
            }
            if s.label == SeverityLabel::NoLabel {
                return Err(Error::invalid(format!(
                    "document `{doc_id}`: spans cannot carry NoLabel"
                )));
            }
            ontology.check_label(&s.characteristic, s.label)?;
        }
        spans.sort_by(|a, b| {
            (a.start, a.end, &a.characteristic).cmp(&(b.start, b.end, &b.characteristic))
        });
        spans.dedup();
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if b.start >= a.end {
                    break;
                }
                if a.characteristic == b.characteristic {
                    return Err(Error::OverlappingSpans {
                        doc_id,
                        characteristic: a.characteristic.clone(),
                    });
                }
            }
        }
        let doc_labels = derive_doc_labels(&spans, ontology);
        Ok(AnnotatedDocument {
            doc_id,
            text,
            spans,
            doc_labels,
            meta: serde_json::Value::Null,
        })
    }

    pub fn tokenize(&self) -> TokenizedDocument {
        tokenize_with_id(&self.doc_id, &self.text)
    }

    pub fn spans_for<'a>(
        &'a self,
        characteristic: &'a str,
    ) -> impl Iterator<Item = &'a SpanAnnotation> + 'a {
        self.spans
            .iter()
            .filter(move |s| s.characteristic == characteristic)
    }

    pub fn doc_label(&self, characteristic: &str) -> SeverityLabel {
        self.doc_labels
            .get(characteristic)
            .copied()
            .unwrap_or(SeverityLabel::NoLabel)
    }

    /// Document labels mapped onto `scheme`.
    pub fn doc_label_under(&self, characteristic: &str, scheme: LabelScheme) -> SeverityLabel {
        scheme.apply(self.doc_label(characteristic))
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

pub fn derive_doc_labels(
    spans: &[SpanAnnotation],
    ontology: &Ontology,
) -> BTreeMap<String, SeverityLabel> {
    ontology
        .characteristics
        .iter()
        .map(|c| {
            let label = aggregate_labels(
                spans
                    .iter()
                    .filter(|s| s.characteristic == c.id)
                    .map(|s| s.label),
            );
            (c.id.clone(), label)
        })
        .collect()
}

/// Drops reports too short to carry findings: fewer than 15 characters, or
/// fewer than 30 characters without a single rule-dictionary hit.
pub fn filter_reports(docs: Vec<AnnotatedDocument>, rules: &RuleSet) -> Vec<AnnotatedDocument> {
    docs.into_iter()
        .filter(|d| {
            let len = d.char_len();
            if len < 15 {
                return false;
            }
            if len < 30 {
                return !rules.match_document(&d.tokenize()).is_empty();
            }
            true
        })
        .collect()
}

/// Train/test partition of document ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Shuffles ids with `seed` and cuts the first `round(ratio * n)` off as the
/// training portion.
pub fn split<S: AsRef<str>>(doc_ids: &[S], ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if doc_ids.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let mut ids: Vec<String> = doc_ids.iter().map(|s| s.as_ref().to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ratio * ids.len() as f64).round() as usize).min(ids.len());
    let test_ids = ids.split_off(n_train);
    Ok(CorpusSplit {
        seed,
        train_ids: ids,
        test_ids,
    })
}

impl CorpusSplit {
    /// Selects documents by id list, preserving corpus order.
    pub fn select<'a>(
        docs: &'a [AnnotatedDocument],
        ids: &[String],
    ) -> Result<Vec<&'a AnnotatedDocument>> {
        let by_id: BTreeMap<&str, &AnnotatedDocument> =
            docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let wanted: std::collections::BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        for id in &wanted {
            if !by_id.contains_key(id) {
                return Err(Error::invalid(format!(
                    "split references unknown document `{id}`"
                )));
            }
        }
        Ok(docs
            .iter()
            .filter(|d| wanted.contains(d.doc_id.as_str()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn span(start: usize, end: usize, c: &str, label: SeverityLabel) -> SpanAnnotation {
        SpanAnnotation {
            start,
            end,
            characteristic: c.into(),
            label,
        }
    }

    #[test]
    fn document_labels_are_derived() {
        let o = Ontology::bundled();
        let doc = AnnotatedDocument::new(
            "d",
            "lichte MI, later ernstige MI",
            vec![
                span(0, 9, "mitral_regurgitation", SeverityLabel::Mild),
                span(17, 28, "mitral_regurgitation", SeverityLabel::Severe),
            ],
            &o,
        )
        .unwrap();
        assert_eq!(doc.doc_label("mitral_regurgitation"), SeverityLabel::Severe);
        assert_eq!(doc.doc_label("aortic_stenosis"), SeverityLabel::NoLabel);
        assert_eq!(doc.doc_labels.len(), 11);
    }

    #[test]
    fn invalid_spans_rejected() {
        let o = Ontology::bundled();
        let err = AnnotatedDocument::new(
            "d",
            "geen MI",
            vec![span(0, 8, "mitral_regurgitation", SeverityLabel::Normal)],
            &o,
        );
        assert!(matches!(err, Err(Error::SpanOutOfBounds { .. })));
        let err = AnnotatedDocument::new(
            "d",
            "lichte WBS",
            vec![span(
                0,
                10,
                "wall_motion_abnormalities",
                SeverityLabel::Mild,
            )],
            &o,
        );
        assert!(matches!(err, Err(Error::InadmissibleLabel { .. })));
        let err = AnnotatedDocument::new(
            "d",
            "geen MI geen",
            vec![
                span(0, 7, "mitral_regurgitation", SeverityLabel::Normal),
                span(5, 12, "mitral_regurgitation", SeverityLabel::Normal),
            ],
            &o,
        );
        assert!(matches!(err, Err(Error::OverlappingSpans { .. })));
        // Different characteristics may overlap.
        AnnotatedDocument::new(
            "d",
            "geen MI geen",
            vec![
                span(0, 7, "mitral_regurgitation", SeverityLabel::Normal),
                span(5, 12, "aortic_stenosis", SeverityLabel::Normal),
            ],
            &o,
        )
        .unwrap();
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let s = split(&ids, 0.8, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.test_ids.len()), (8, 2));
        assert_eq!(s, split(&ids, 0.8, 1).unwrap());
        assert!(split(&ids, 0.0, 1).is_err());
        assert!(split(&ids, 1.0, 1).is_err());
        assert!(split::<String>(&[], 0.8, 1).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let ids: Vec<String> = (0..1000).map(|i| format!("d{i}")).collect();
        let a = split(&ids, 0.8, 1).unwrap();
        let b = split(&ids, 0.8, 2).unwrap();
        for s in [&a, &b] {
            let train: HashSet<_> = s.train_ids.iter().collect();
            let test: HashSet<_> = s.test_ids.iter().collect();
            assert!(train.is_disjoint(&test));
            assert_eq!(train.len() + test.len(), ids.len());
            let frac = train.len() as f64 / ids.len() as f64;
            assert!((0.78..=0.82).contains(&frac));
        }
        assert_eq!(a.train_ids.len(), b.train_ids.len());
        assert_ne!(a.train_ids, b.train_ids);
    }
}
