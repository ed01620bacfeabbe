//! Randomized laws over the public API.

use echolab_core::corpus::SpanAnnotation;
use echolab_core::eval::{false_label_rate, jaccard_coverage, Averaging, ConfusionTable};
use echolab_core::ontology::{aggregate_labels, severity_rank, simplify_label};
use echolab_core::{AnnotatedDocument, Ontology, SeverityLabel};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = SeverityLabel> {
    prop::sample::select(SeverityLabel::ALL.to_vec())
}

const GRADED: [SeverityLabel; 4] = [
    SeverityLabel::Normal,
    SeverityLabel::Mild,
    SeverityLabel::Moderate,
    SeverityLabel::Severe,
];

/// A ten-token document of single letters with non-overlapping spans given
/// as (start token, length, label index) triples.
fn doc(id: &str, raw: &[(usize, usize, usize)]) -> AnnotatedDocument {
    let o = Ontology::bundled();
    let text = "a b c d e f g h i j";
    let mut used = [false; 10];
    let mut spans = Vec::new();
    for &(start, len, l) in raw {
        let end = (start + len).min(10);
        if used[start..end].iter().any(|&u| u) {
            continue;
        }
        used[start..end].iter_mut().for_each(|u| *u = true);
        spans.push(SpanAnnotation {
            start: 2 * start,
            end: 2 * end - 1,
            characteristic: "aortic_stenosis".into(),
            label: GRADED[l % 4],
        });
    }
    AnnotatedDocument::new(id, text, spans, &o).unwrap()
}

fn raw_spans() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..10usize, 1..4usize, 0..4usize), 0..5)
}

proptest! {
    #[test]
    fn aggregation_is_order_free_and_idempotent(mut xs in prop::collection::vec(label(), 0..8), y in label()) {
        let a = aggregate_labels(xs.iter().copied());
        xs.reverse();
        prop_assert_eq!(a, aggregate_labels(xs.iter().copied()));
        prop_assert_eq!(aggregate_labels([y, y]), y);
        let split = xs.len() / 2;
        let nested = aggregate_labels([
            aggregate_labels(xs[..split].iter().copied()),
            aggregate_labels(xs[split..].iter().copied()),
        ]);
        prop_assert_eq!(a, nested);
        prop_assert!(xs.iter().all(|&x| severity_rank(x) <= severity_rank(a)));
    }

    #[test]
    fn simplification_is_idempotent(x in label()) {
        prop_assert_eq!(simplify_label(simplify_label(x)), simplify_label(x));
    }

    #[test]
    fn weighted_equals_macro_under_equal_support(
        preds in prop::collection::vec(0..3usize, 12),
    ) {
        // Four gold instances for each of three classes.
        let classes = [SeverityLabel::Mild, SeverityLabel::Moderate, SeverityLabel::Severe];
        let mut t = ConfusionTable::new();
        for (i, &p) in preds.iter().enumerate() {
            t.add(classes[i % 3], classes[p]);
        }
        let w = t.prf(Averaging::Weighted).unwrap();
        let m = t.prf(Averaging::Macro).unwrap();
        prop_assert!((w.recall - m.recall).abs() < 1e-12);
        prop_assert!((w.precision - m.precision).abs() < 1e-12);
        prop_assert!((w.f1 - m.f1).abs() < 1e-12);
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(g in raw_spans(), p in raw_spans()) {
        let gold = vec![doc("d", &g)];
        let pred = vec![doc("d", &p)];
        let a = jaccard_coverage(&gold, &pred, "aortic_stenosis").unwrap();
        let b = jaccard_coverage(&pred, &gold, "aortic_stenosis").unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(jaccard_coverage(&gold, &gold, "aortic_stenosis").unwrap(), 1.0);
    }

    #[test]
    fn false_label_rate_is_a_fraction(g in raw_spans(), p in raw_spans()) {
        let gold = vec![doc("d", &g)];
        let pred = vec![doc("d", &p)];
        let r = false_label_rate(&gold, &pred, "aortic_stenosis").unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(false_label_rate(&gold, &gold, "aortic_stenosis").unwrap(), 0.0);
    }
}

#[test]
fn adding_a_gold_token_never_lowers_jaccard() {
    let gold = vec![doc("d", &[(2, 2, 1)])];
    let narrow = vec![doc("d", &[(5, 1, 1)])];
    let wider = vec![doc("d", &[(2, 1, 1), (5, 1, 1)])];
    let a = jaccard_coverage(&gold, &narrow, "aortic_stenosis").unwrap();
    let b = jaccard_coverage(&gold, &wider, "aortic_stenosis").unwrap();
    assert!(b >= a);
    assert!((b - 1.0 / 3.0).abs() < 1e-12);
}
