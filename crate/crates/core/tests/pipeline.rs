//! Cross-module runs on small synthetic corpora.

use std::ops::Range;

use echolab_core::container::ModelFile;
use echolab_core::corpus::{
    generate_synthetic, ingest, split, to_jsonl, CorpusSplit, Profile, Templates,
};
use echolab_core::doc::gbdt::GbdtConfig;
use echolab_core::doc::lda::LdaConfig;
use echolab_core::doc::{
    doc_labels_from_spans, train_bow, train_cnn, BowConfig, BowModel, CnnConfig, CnnModel,
};
use echolab_core::eval::{
    doc_eval, gold_doc_labels, score_spans, span_eval_end_to_end, span_eval_matched, Averaging,
    RangeClassifier,
};
use echolab_core::span::{train_span_model, SpanModel, SpanModelConfig};
use echolab_core::{
    AnnotatedDocument, LabelScheme, Ontology, RuleSet, SeverityLabel, TokenizedDocument,
};

fn corpus(n: usize, seed: u64) -> Vec<AnnotatedDocument> {
    let o = Ontology::bundled();
    generate_synthetic(&o, &Templates::bundled(), n, seed, &Profile::table2())
        .unwrap()
        .docs
}

#[test]
fn synthetic_corpus_round_trips_through_jsonl() {
    let o = Ontology::bundled();
    let docs = corpus(150, 3);
    let back = ingest(to_jsonl(&docs).as_bytes(), &o).unwrap();
    assert_eq!(back, docs);
    assert_eq!(to_jsonl(&corpus(150, 3)), to_jsonl(&docs));
}

#[test]
fn split_selects_disjoint_sides() {
    let docs = corpus(50, 4);
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let s = split(&ids, 0.8, 9).unwrap();
    let train = CorpusSplit::select(&docs, &s.train_ids).unwrap();
    let test = CorpusSplit::select(&docs, &s.test_ids).unwrap();
    assert_eq!((train.len(), test.len()), (40, 10));
    assert!(train.iter().all(|d| !s.test_ids.contains(&d.doc_id)));
}

#[test]
fn demo_rules_recover_covered_gold_spans() {
    let o = Ontology::bundled();
    let rules = RuleSet::demo(&o).unwrap();
    let gold = corpus(300, 5);
    let predicted: Vec<AnnotatedDocument> = gold
        .iter()
        .map(|d| {
            AnnotatedDocument::new(
                d.doc_id.clone(),
                d.text.clone(),
                rules.match_document(&d.tokenize()),
                &o,
            )
            .unwrap()
        })
        .collect();
    for c in o.ids() {
        let s = score_spans(&gold, &predicted, c).unwrap();
        assert_eq!(s.table.prf(Averaging::Weighted).unwrap().f1, 1.0, "{c}");
        assert_eq!(s.jaccard, 1.0, "{c}");
        assert_eq!(s.false_label_rate, 0.0, "{c}");
    }
    let via_spans = doc_labels_from_spans(&predicted, &o);
    let table = doc_eval(
        &gold_doc_labels(&gold),
        &via_spans,
        "mitral_regurgitation",
        LabelScheme::Full,
    )
    .unwrap();
    assert_eq!(table.prf(Averaging::Macro).unwrap().f1, 1.0);
}

/// Answers range queries from the gold annotations.
struct GoldLookup<'a>(&'a [AnnotatedDocument]);

impl RangeClassifier for GoldLookup<'_> {
    fn classify_range(
        &self,
        doc: &TokenizedDocument,
        characteristic: &str,
        range: Range<usize>,
    ) -> SeverityLabel {
        let (start, end) = doc.char_span(range);
        let d = self.0.iter().find(|d| d.doc_id == doc.doc_id).unwrap();
        d.spans_for(characteristic)
            .find(|s| s.start == start && s.end == end)
            .map_or(SeverityLabel::NoLabel, |s| s.label)
    }
}

#[test]
fn end_to_end_reduces_to_matched_on_gold_ranges() {
    let o = Ontology::bundled();
    let gold = corpus(120, 6);
    for c in o.ids() {
        let e2e = span_eval_end_to_end(&gold, &gold, c).unwrap();
        let matched = span_eval_matched(&gold, &GoldLookup(&gold), c).unwrap();
        assert_eq!(e2e, matched, "{c}");
    }
}

fn tiny_span_config() -> SpanModelConfig {
    SpanModelConfig {
        embed_rows: [200, 50, 100, 50],
        width: 16,
        hidden: 16,
        encoder_depth: 2,
        max_steps: 80,
        eval_every: 40,
        patience: 40,
        seed: 1,
        ..SpanModelConfig::default()
    }
}

#[test]
fn span_model_reloads_bit_identically() {
    let o = Ontology::bundled();
    let docs = corpus(60, 7);
    let model = train_span_model(&docs, &o, "aortic_stenosis", &tiny_span_config()).unwrap();
    let again = train_span_model(&docs, &o, "aortic_stenosis", &tiny_span_config()).unwrap();
    let bytes = model.to_model_file().to_bytes();
    assert_eq!(bytes, again.to_model_file().to_bytes());

    let loaded = SpanModel::from_model_file(&ModelFile::read(&bytes[..]).unwrap()).unwrap();
    for d in docs.iter().take(5) {
        let t = d.tokenize();
        let ranges: Vec<Range<usize>> = (0..t.len()).map(|i| i..(i + 2).min(t.len())).collect();
        let a = model.probabilities(&t, &ranges);
        let b = loaded.probabilities(&t, &ranges);
        assert_eq!(a, b);
        for row in &a {
            assert!((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
    assert_eq!(loaded.log, model.log);
}

#[test]
fn doc_models_reload_and_follow_the_scheme() {
    let o = Ontology::bundled();
    let docs = corpus(120, 8);
    let bow_cfg = BowConfig {
        vocab_size: 300,
        lda: LdaConfig {
            n_topics: 4,
            train_sweeps: 10,
            infer_sweeps: 5,
            ..LdaConfig::default()
        },
        gbdt: GbdtConfig {
            n_rounds: 5,
            max_depth: 3,
            ..GbdtConfig::default()
        },
    };
    let chars = ["aortic_stenosis", "pericardial_effusion"];
    let bow = train_bow(&docs, &o, &chars, LabelScheme::Simplified, &bow_cfg).unwrap();
    let reloaded =
        BowModel::from_model_file(&ModelFile::read(&bow.to_model_file().to_bytes()[..]).unwrap())
            .unwrap();
    for d in &docs[..10] {
        let p = bow.predict(d);
        assert_eq!(p, reloaded.predict(d));
        assert!(p.values().all(|l| matches!(
            l,
            SeverityLabel::NoLabel | SeverityLabel::Normal | SeverityLabel::Present
        )));
    }

    let cnn_cfg = CnnConfig {
        vocab_size: 300,
        embed_dim: 8,
        filters: 4,
        epochs: 2,
        batch_size: 16,
        ..CnnConfig::default()
    };
    let cnn = train_cnn(&docs, &o, "aortic_stenosis", LabelScheme::Full, &cnn_cfg).unwrap();
    let reloaded =
        CnnModel::from_model_file(&ModelFile::read(&cnn.to_model_file().to_bytes()[..]).unwrap())
            .unwrap();
    for d in &docs[..10] {
        let p = cnn.probabilities(d);
        assert_eq!(p, reloaded.probabilities(d));
        assert!((p.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-5);
    }
}
