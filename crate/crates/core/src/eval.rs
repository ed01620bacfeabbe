//! Precision/recall/F1 with weighted and macro averaging, span alignment,
//! token Jaccard coverage, false-label rate and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::ontology::{LabelScheme, SeverityLabel};
use crate::rules::RuleSet;
use crate::textproc::TokenizedDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Weighted,
    Macro,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Weighted => "weighted",
            Averaging::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

fn label_index(label: SeverityLabel) -> usize {
    SeverityLabel::ALL.iter().position(|&l| l == label).unwrap()
}

/// Gold × predicted counts over the six severity labels.
///
/// `negative` optionally names a class that still occupies rows and columns
/// (so it affects other classes' precision and recall) but is left out of the
/// averaged scores. Span evaluation uses it for `NoLabel`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTable {
    counts: [[u64; 6]; 6],
    negative: Option<SeverityLabel>,
}

impl ConfusionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_negative(negative: SeverityLabel) -> Self {
        ConfusionTable {
            counts: [[0; 6]; 6],
            negative: Some(negative),
        }
    }

    pub fn negative(&self) -> Option<SeverityLabel> {
        self.negative
    }

    pub fn add(&mut self, gold: SeverityLabel, predicted: SeverityLabel) {
        self.add_n(gold, predicted, 1);
    }

    pub fn add_n(&mut self, gold: SeverityLabel, predicted: SeverityLabel, n: u64) {
        self.counts[label_index(gold)][label_index(predicted)] += n;
    }

    pub fn count(&self, gold: SeverityLabel, predicted: SeverityLabel) -> u64 {
        self.counts[label_index(gold)][label_index(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Gold count of `label`.
    pub fn support(&self, label: SeverityLabel) -> u64 {
        self.counts[label_index(label)].iter().sum()
    }

    pub fn predicted(&self, label: SeverityLabel) -> u64 {
        let j = label_index(label);
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// Labels with any gold or predicted mass, in declaration order.
    pub fn classes(&self) -> Vec<SeverityLabel> {
        SeverityLabel::ALL
            .into_iter()
            .filter(|&l| self.support(l) > 0 || self.predicted(l) > 0)
            .collect()
    }

    /// Classes that enter the averages.
    pub fn scored_classes(&self) -> Vec<SeverityLabel> {
        self.classes()
            .into_iter()
            .filter(|&l| Some(l) != self.negative)
            .collect()
    }

    pub fn class_prf(&self, label: SeverityLabel) -> Prf {
        let tp = self.count(label, label) as f64;
        let precision = ratio(tp, self.predicted(label) as f64);
        let recall = ratio(tp, self.support(label) as f64);
        Prf {
            precision,
            recall,
            f1: f1_of(precision, recall),
        }
    }

    pub fn prf(&self, averaging: Averaging) -> Result<Prf> {
        let classes = self.scored_classes();
        let support: u64 = classes.iter().map(|&c| self.support(c)).sum();
        if support == 0 {
            return Err(Error::invalid(
                "confusion table has no gold instances to score",
            ));
        }
        let mut acc = Prf::default();
        let mut weight_sum = 0.0;
        for &c in &classes {
            let w = match averaging {
                Averaging::Weighted => self.support(c) as f64,
                Averaging::Macro => 1.0,
            };
            let s = self.class_prf(c);
            acc.precision += w * s.precision;
            acc.recall += w * s.recall;
            acc.f1 += w * s.f1;
            weight_sum += w;
        }
        Ok(Prf {
            precision: acc.precision / weight_sum,
            recall: acc.recall / weight_sum,
            f1: acc.f1 / weight_sum,
        })
    }

    pub fn merge(&mut self, other: &ConfusionTable) {
        for i in 0..6 {
            for j in 0..6 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

/// A labelled token range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledRange {
    pub range: Range<usize>,
    pub label: SeverityLabel,
}

fn overlap(a: &Range<usize>, b: &Range<usize>) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// One-to-one alignment of predicted to gold ranges. Candidate pairs need a
/// positive token overlap; pairs are taken greedily by descending Jaccard,
/// then earliest gold, then earliest prediction. Returns `(gold, pred)`
/// index pairs; unmatched items appear with `None` on the other side.
pub fn align_spans(
    gold: &[LabelledRange],
    pred: &[LabelledRange],
) -> Vec<(Option<usize>, Option<usize>)> {
    let mut pairs = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let inter = overlap(&g.range, &p.range);
            if inter > 0 {
                let union = g.range.len() + p.range.len() - inter;
                pairs.push((inter as f64 / union as f64, gi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(gold[a.1].range.start.cmp(&gold[b.1].range.start))
            .then(a.1.cmp(&b.1))
            .then(pred[a.2].range.start.cmp(&pred[b.2].range.start))
            .then(a.2.cmp(&b.2))
    });
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut out = Vec::new();
    for (_, gi, pi) in pairs {
        if !gold_used[gi] && !pred_used[pi] {
            gold_used[gi] = true;
            pred_used[pi] = true;
            out.push((Some(gi), Some(pi)));
        }
    }
    out.extend(
        (0..gold.len())
            .filter(|&g| !gold_used[g])
            .map(|g| (Some(g), None)),
    );
    out.extend(
        (0..pred.len())
            .filter(|&p| !pred_used[p])
            .map(|p| (None, Some(p))),
    );
    out
}

/// Gold document, its tokenization and both sides' labelled token ranges
/// for one characteristic.
struct DocRanges {
    gold: Vec<LabelledRange>,
    pred: Vec<LabelledRange>,
    doc: TokenizedDocument,
}

fn ranges_of(
    doc: &AnnotatedDocument,
    tokens: &TokenizedDocument,
    characteristic: &str,
) -> Result<Vec<LabelledRange>> {
    let len = doc.char_len();
    doc.spans_for(characteristic)
        .map(|s| {
            if s.end > len || s.start >= s.end {
                return Err(Error::SpanOutOfBounds {
                    doc_id: doc.doc_id.clone(),
                    start: s.start,
                    end: s.end,
                    len,
                });
            }
            let range = tokens.token_range(s.start, s.end).ok_or_else(|| {
                Error::invalid(format!(
                    "document `{}`: span [{}, {}) covers no token",
                    doc.doc_id, s.start, s.end
                ))
            })?;
            Ok(LabelledRange {
                range,
                label: s.label,
            })
        })
        .collect()
}

fn pair_documents<'a>(
    gold: &'a [AnnotatedDocument],
    predicted: &'a [AnnotatedDocument],
) -> Result<Vec<(&'a AnnotatedDocument, Option<&'a AnnotatedDocument>)>> {
    let by_id: BTreeMap<&str, &AnnotatedDocument> =
        predicted.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(extra) = by_id.keys().find(|id| !gold_ids.contains(*id)) {
        return Err(Error::invalid(format!(
            "prediction for unknown document `{extra}`"
        )));
    }
    for (g, p) in gold
        .iter()
        .filter_map(|g| by_id.get(g.doc_id.as_str()).map(|p| (g, p)))
    {
        if g.text != p.text {
            return Err(Error::invalid(format!(
                "document `{}`: predicted text differs from gold text",
                g.doc_id
            )));
        }
    }
    Ok(gold
        .iter()
        .map(|g| (g, by_id.get(g.doc_id.as_str()).copied()))
        .collect())
}

fn doc_ranges(
    gold: &[AnnotatedDocument],
    predicted: &[AnnotatedDocument],
    characteristic: &str,
) -> Result<Vec<DocRanges>> {
    pair_documents(gold, predicted)?
        .into_iter()
        .map(|(g, p)| {
            let doc = g.tokenize();
            let gold = ranges_of(g, &doc, characteristic)?;
            let pred = match p {
                Some(p) => ranges_of(p, &doc, characteristic)?,
                None => Vec::new(),
            };
            Ok(DocRanges { gold, pred, doc })
        })
        .collect()
}

/// Scores span prediction for one characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub table: ConfusionTable,
    pub jaccard: f64,
    pub false_label_rate: f64,
}

fn table_from(ranges: &[DocRanges]) -> ConfusionTable {
    let mut table = ConfusionTable::with_negative(SeverityLabel::NoLabel);
    for d in ranges {
        for (g, p) in align_spans(&d.gold, &d.pred) {
            let gl = g.map_or(SeverityLabel::NoLabel, |i| d.gold[i].label);
            let pl = p.map_or(SeverityLabel::NoLabel, |i| d.pred[i].label);
            table.add(gl, pl);
        }
    }
    table
}

fn jaccard_from(ranges: &[DocRanges]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for d in ranges {
        let mut g = vec![false; d.doc.len()];
        let mut p = vec![false; d.doc.len()];
        d.gold
            .iter()
            .for_each(|r| g[r.range.clone()].iter_mut().for_each(|x| *x = true));
        d.pred
            .iter()
            .for_each(|r| p[r.range.clone()].iter_mut().for_each(|x| *x = true));
        for (a, b) in g.iter().zip(&p) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn false_label_rate_from(ranges: &[DocRanges]) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for d in ranges {
        for (g, p) in align_spans(&d.gold, &d.pred) {
            let Some(p) = p else { continue };
            total += 1;
            let gold_abnormal = g.is_some_and(|i| d.gold[i].label.is_abnormal());
            if d.pred[p].label.is_abnormal() && !gold_abnormal {
                wrong += 1;
            }
        }
    }
    ratio(wrong as f64, total as f64)
}

/// End-to-end confusion table: aligned pairs add `(gold, pred)`, unmatched
/// gold adds `(gold, NoLabel)` and unmatched predictions `(NoLabel, pred)`.
/// `NoLabel` is kept out of the averages.
pub fn span_eval_end_to_end(
    gold: &[AnnotatedDocument],
    predicted: &[AnnotatedDocument],
    characteristic: &str,
) -> Result<ConfusionTable> {
    Ok(table_from(&doc_ranges(gold, predicted, characteristic)?))
}

/// Token-level Jaccard between gold- and prediction-covered positions,
/// pooled over all documents; 1 when both are empty.
pub fn jaccard_coverage(
    gold: &[AnnotatedDocument],
    predicted: &[AnnotatedDocument],
    characteristic: &str,
) -> Result<f64> {
    Ok(jaccard_from(&doc_ranges(gold, predicted, characteristic)?))
}

/// Share of predicted spans asserting an abnormality where the aligned gold
/// span is `Normal` or absent.
pub fn false_label_rate(
    gold: &[AnnotatedDocument],
    predicted: &[AnnotatedDocument],
    characteristic: &str,
) -> Result<f64> {
    Ok(false_label_rate_from(&doc_ranges(
        gold,
        predicted,
        characteristic,
    )?))
}

/// All end-to-end span scores for one characteristic in a single pass.
pub fn score_spans(
    gold: &[AnnotatedDocument],
    predicted: &[AnnotatedDocument],
    characteristic: &str,
) -> Result<SpanScores> {
    let ranges = doc_ranges(gold, predicted, characteristic)?;
    Ok(SpanScores {
        table: table_from(&ranges),
        jaccard: jaccard_from(&ranges),
        false_label_rate: false_label_rate_from(&ranges),
    })
}

/// Anything that can label an externally chosen token range.
pub trait RangeClassifier {
    fn classify_range(
        &self,
        doc: &TokenizedDocument,
        characteristic: &str,
        range: Range<usize>,
    ) -> SeverityLabel;
}

impl RangeClassifier for RuleSet {
    fn classify_range(
        &self,
        doc: &TokenizedDocument,
        characteristic: &str,
        range: Range<usize>,
    ) -> SeverityLabel {
        self.label_window(doc, characteristic, range)
    }
}

/// Classification of the exact gold ranges only.
pub fn span_eval_matched<C: RangeClassifier + ?Sized>(
    gold: &[AnnotatedDocument],
    classifier: &C,
    characteristic: &str,
) -> Result<ConfusionTable> {
    let mut table = ConfusionTable::with_negative(SeverityLabel::NoLabel);
    for g in gold {
        let doc = g.tokenize();
        for r in ranges_of(g, &doc, characteristic)? {
            table.add(
                r.label,
                classifier.classify_range(&doc, characteristic, r.range),
            );
        }
    }
    Ok(table)
}

/// Document id → characteristic → label.
pub type DocLabels = BTreeMap<String, BTreeMap<String, SeverityLabel>>;

pub fn gold_doc_labels(docs: &[AnnotatedDocument]) -> DocLabels {
    docs.iter()
        .map(|d| (d.doc_id.clone(), d.doc_labels.clone()))
        .collect()
}

/// Multi-class document confusion for one characteristic; `NoLabel` is an
/// ordinary class here. Both sides are mapped onto `scheme` first.
pub fn doc_eval(
    gold: &DocLabels,
    predicted: &DocLabels,
    characteristic: &str,
    scheme: LabelScheme,
) -> Result<ConfusionTable> {
    if gold.len() != predicted.len() || gold.keys().any(|k| !predicted.contains_key(k)) {
        return Err(Error::invalid("gold and predicted document ids differ"));
    }
    let mut table = ConfusionTable::new();
    let get = |m: &BTreeMap<String, SeverityLabel>| {
        scheme.apply(
            m.get(characteristic)
                .copied()
                .unwrap_or(SeverityLabel::NoLabel),
        )
    };
    for (id, g) in gold {
        table.add(get(g), get(&predicted[id]));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub characteristic: String,
    /// `None` when the table has no gold instances.
    pub weighted: Option<Prf>,
    pub macro_avg: Option<Prf>,
    pub jaccard: Option<f64>,
    pub false_label_rate: Option<f64>,
    pub support: BTreeMap<SeverityLabel, u64>,
}

impl ReportRow {
    pub fn from_table(characteristic: &str, table: &ConfusionTable) -> ReportRow {
        ReportRow {
            characteristic: characteristic.to_string(),
            weighted: table.prf(Averaging::Weighted).ok(),
            macro_avg: table.prf(Averaging::Macro).ok(),
            jaccard: None,
            false_label_rate: None,
            support: table
                .scored_classes()
                .into_iter()
                .map(|c| (c, table.support(c)))
                .collect(),
        }
    }

    pub fn from_span_scores(characteristic: &str, scores: &SpanScores) -> ReportRow {
        ReportRow {
            jaccard: Some(scores.jaccard),
            false_label_rate: Some(scores.false_label_rate),
            ..ReportRow::from_table(characteristic, &scores.table)
        }
    }

    pub fn averaged(&self, averaging: Averaging) -> Option<Prf> {
        match averaging {
            Averaging::Weighted => self.weighted,
            Averaging::Macro => self.macro_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl EvalReport {
    pub fn new(title: impl Into<String>) -> Self {
        EvalReport {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn row(&self, characteristic: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.characteristic == characteristic)
    }

    fn sorted_rows(&self) -> Vec<&ReportRow> {
        let mut rows: Vec<&ReportRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.characteristic.cmp(&b.characteristic));
        rows
    }
}

fn cell(w: Option<f64>, m: Option<f64>) -> String {
    match (w, m) {
        (Some(w), Some(m)) => format!("{w:.2} ({m:.2})"),
        _ => "n/a".to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let rows = report.sorted_rows();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("characteristic,metric,averaging,value\n");
            for r in rows {
                for (metric, get) in [
                    ("precision", (|p: Prf| p.precision) as fn(Prf) -> f64),
                    ("recall", |p: Prf| p.recall),
                    ("f1", |p: Prf| p.f1),
                ] {
                    for avg in [Averaging::Weighted, Averaging::Macro] {
                        if let Some(p) = r.averaged(avg) {
                            let _ = writeln!(
                                out,
                                "{},{metric},{},{:.6}",
                                r.characteristic,
                                avg.as_str(),
                                get(p)
                            );
                        }
                    }
                }
                if let Some(j) = r.jaccard {
                    let _ = writeln!(out, "{},jaccard,none,{j:.6}", r.characteristic);
                }
                if let Some(f) = r.false_label_rate {
                    let _ = writeln!(out, "{},false_label_rate,none,{f:.6}", r.characteristic);
                }
            }
        }
        ReportFormat::Markdown => {
            let spans = report.rows.iter().any(|r| r.jaccard.is_some());
            if !report.title.is_empty() {
                let _ = writeln!(out, "### {}\n", report.title);
            }
            out.push_str("| Characteristic | Precision | Recall | F1");
            if spans {
                out.push_str(" | Jaccard | False-label rate");
            }
            out.push_str(" |\n|---|---|---|---");
            if spans {
                out.push_str("|---|---");
            }
            out.push_str("|\n");
            for r in rows {
                let w = r.weighted;
                let m = r.macro_avg;
                let _ = write!(
                    out,
                    "| {} | {} | {} | {}",
                    r.characteristic,
                    cell(w.map(|p| p.precision), m.map(|p| p.precision)),
                    cell(w.map(|p| p.recall), m.map(|p| p.recall)),
                    cell(w.map(|p| p.f1), m.map(|p| p.f1)),
                );
                if spans {
                    let _ = write!(out, " | {} | {}", opt(r.jaccard), opt(r.false_label_rate));
                }
                out.push_str(" |\n");
            }
            out.push_str("\nWeighted and macro (in brackets) scores.\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpanAnnotation;
    use crate::ontology::Ontology;
    use SeverityLabel::*;

    #[test]
    fn hand_example() {
        let mut t = ConfusionTable::new();
        t.add(Mild, Mild);
        t.add(Mild, Mild);
        t.add(Severe, Mild);
        let w = t.prf(Averaging::Weighted).unwrap();
        let m = t.prf(Averaging::Macro).unwrap();
        assert!((w.f1 - 1.6 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 0.4).abs() < 1e-12);
        assert!((t.class_prf(Mild).precision - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(ConfusionTable::new().prf(Averaging::Macro).is_err());
        let mut t = ConfusionTable::with_negative(NoLabel);
        t.add(NoLabel, Mild);
        assert!(t.prf(Averaging::Weighted).is_err());
    }

    #[test]
    fn negative_class_only_shapes_other_scores() {
        let mut t = ConfusionTable::with_negative(NoLabel);
        t.add(Mild, Mild);
        t.add(NoLabel, Mild);
        t.add(Severe, NoLabel);
        let w = t.prf(Averaging::Weighted).unwrap();
        // Mild: P 1/2, R 1, F1 2/3; Severe: 0.
        assert!((w.f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(t.scored_classes(), vec![Mild, Severe]);
    }

    fn lr(range: Range<usize>, label: SeverityLabel) -> LabelledRange {
        LabelledRange { range, label }
    }

    #[test]
    fn alignment_prefers_best_overlap() {
        let gold = [lr(0..2, Mild), lr(5..7, Severe)];
        let pred = [lr(1..6, Mild), lr(5..7, Severe), lr(10..11, Normal)];
        let pairs = align_spans(&gold, &pred);
        assert!(pairs.contains(&(Some(1), Some(1))));
        assert!(pairs.contains(&(Some(0), Some(0))));
        assert!(pairs.contains(&(None, Some(2))));
        assert_eq!(pairs.len(), 3);
    }

    fn doc(text: &str, spans: &[(usize, usize, SeverityLabel)]) -> AnnotatedDocument {
        let spans = spans
            .iter()
            .map(|&(start, end, label)| SpanAnnotation {
                start,
                end,
                characteristic: "aortic_stenosis".into(),
                label,
            })
            .collect();
        AnnotatedDocument::new("d", text, spans, &Ontology::bundled()).unwrap()
    }

    #[test]
    fn span_metrics_on_token_sets() {
        // tokens: a0 b1 c2 d3 e4
        let text = "a b c d e";
        let gold = [doc(text, &[(4, 7, Mild)])]; // tokens 2,3
        let pred = [doc(text, &[(6, 9, Moderate)])]; // tokens 3,4
        assert!(
            (jaccard_coverage(&gold, &pred, "aortic_stenosis").unwrap() - 1.0 / 3.0).abs() < 1e-12
        );
        let t = span_eval_end_to_end(&gold, &pred, "aortic_stenosis").unwrap();
        assert_eq!(t.count(Mild, Moderate), 1);
        assert_eq!(t.total(), 1);
        assert_eq!(
            false_label_rate(&gold, &pred, "aortic_stenosis").unwrap(),
            0.0
        );

        let none = [doc(text, &[])];
        assert_eq!(
            jaccard_coverage(&gold, &none, "aortic_stenosis").unwrap(),
            0.0
        );
        assert_eq!(
            jaccard_coverage(&none, &none, "aortic_stenosis").unwrap(),
            1.0
        );
        let t = span_eval_end_to_end(&gold, &none, "aortic_stenosis").unwrap();
        assert_eq!(t.count(Mild, NoLabel), 1);
    }

    #[test]
    fn false_labels_over_normal_text() {
        let text = "a b c d e f g h i j k l m n o p q r s t";
        // Ten predictions on ten 1-token ranges; two are abnormal over Normal gold.
        let gold_spans: Vec<_> = (0..10).map(|i| (4 * i, 4 * i + 1, Normal)).collect();
        let mut pred_spans = gold_spans.clone();
        pred_spans[3].2 = Severe;
        pred_spans[7].2 = Mild;
        let g = [doc(text, &gold_spans)];
        let p = [doc(text, &pred_spans)];
        assert!((false_label_rate(&g, &p, "aortic_stenosis").unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(false_label_rate(&g, &g, "aortic_stenosis").unwrap(), 0.0);
    }

    #[test]
    fn unknown_prediction_document_is_rejected() {
        let g = [doc("a b", &[])];
        let mut p = doc("a b", &[]);
        p.doc_id = "other".into();
        assert!(span_eval_end_to_end(&g, &[p], "aortic_stenosis").is_err());
    }

    #[test]
    fn doc_eval_checks_ids_and_applies_scheme() {
        let mut gold = DocLabels::new();
        gold.insert("a".into(), BTreeMap::from([("x".to_string(), Mild)]));
        let mut pred = DocLabels::new();
        pred.insert("a".into(), BTreeMap::from([("x".to_string(), Severe)]));
        let full = doc_eval(&gold, &pred, "x", LabelScheme::Full).unwrap();
        assert_eq!(full.count(Mild, Severe), 1);
        let simple = doc_eval(&gold, &pred, "x", LabelScheme::Simplified).unwrap();
        assert_eq!(simple.count(Present, Present), 1);
        pred.insert("b".into(), BTreeMap::new());
        assert!(doc_eval(&gold, &pred, "x", LabelScheme::Full).is_err());
    }

    #[test]
    fn report_rendering() {
        let empty = EvalReport::new("");
        assert_eq!(
            render_report(&empty, ReportFormat::Csv),
            "characteristic,metric,averaging,value\n"
        );
        let mut t = ConfusionTable::new();
        t.add(Mild, Mild);
        t.add(Severe, Mild);
        let mut report = EvalReport::new("demo");
        report.push(ReportRow::from_table("zeta", &t));
        report.push(ReportRow::from_table("alpha", &t));
        let md = render_report(&report, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().filter(|l| l.starts_with("| ")).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("| alpha | 0.25 (0.25) | 0.50 (0.50) | 0.33 (0.33)"));
        let csv = render_report(&report, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("alpha,precision,weighted,"));
    }
}
