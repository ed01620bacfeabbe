//! Document-level classifiers and the span-to-document heuristic.

pub mod bow;
pub mod cnn;
pub mod gbdt;
pub mod lda;
pub mod tfidf;

use std::collections::BTreeMap;

use crate::corpus::{derive_doc_labels, AnnotatedDocument, SpanAnnotation};
use crate::eval::DocLabels;
use crate::ontology::{aggregate_labels, Characteristic, LabelScheme, Ontology, SeverityLabel};

pub use bow::{train_bow, BowConfig, BowModel};
pub use cnn::{train_cnn, CnnConfig, CnnModel};

/// Document label implied by one characteristic's span labels: the most
/// severe one, or NoLabel without spans.
pub fn spans_to_doc_label<I>(labels: I) -> SeverityLabel
where
    I: IntoIterator<Item = SeverityLabel>,
{
    aggregate_labels(labels)
}

/// Document labels of (usually predicted) annotated documents.
pub fn doc_labels_from_spans(docs: &[AnnotatedDocument], ontology: &Ontology) -> DocLabels {
    docs.iter()
        .map(|d| (d.doc_id.clone(), derive_doc_labels(&d.spans, ontology)))
        .collect()
}

/// Labels for one characteristic from a flat span list.
pub fn label_from_spans(spans: &[SpanAnnotation], characteristic: &str) -> SeverityLabel {
    spans_to_doc_label(
        spans
            .iter()
            .filter(|s| s.characteristic == characteristic)
            .map(|s| s.label),
    )
}

/// Output classes of a document classifier: NoLabel first, then the
/// characteristic's labels under `scheme` in rank order.
pub fn doc_classes(characteristic: &Characteristic, scheme: LabelScheme) -> Vec<SeverityLabel> {
    let mut out = vec![SeverityLabel::NoLabel];
    out.extend(
        characteristic
            .labels_under(scheme)
            .into_iter()
            .filter(|&l| l != SeverityLabel::NoLabel),
    );
    out
}

pub fn norm_tokens(doc: &AnnotatedDocument) -> Vec<String> {
    doc.tokenize().tokens.into_iter().map(|t| t.norm).collect()
}

/// Collects per-characteristic predictions into the evaluation layout.
pub fn collect_doc_labels<'a, I>(predictions: I) -> DocLabels
where
    I: IntoIterator<Item = (&'a str, &'a str, SeverityLabel)>,
{
    let mut out: DocLabels = BTreeMap::new();
    for (doc_id, characteristic, label) in predictions {
        out.entry(doc_id.to_string())
            .or_default()
            .insert(characteristic.to_string(), label);
    }
    out
}
