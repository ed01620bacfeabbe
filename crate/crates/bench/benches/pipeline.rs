use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use echolab_core::corpus::{generate_synthetic, Profile, Templates};
use echolab_core::doc::gbdt::GbdtConfig;
use echolab_core::doc::lda::LdaConfig;
use echolab_core::doc::{train_bow, train_cnn, BowConfig, CnnConfig};
use echolab_core::span::{
    suggest_spans, train_span_model, SpanModelConfig, SuggesterConfig, DEFAULT_THRESHOLD,
};
use echolab_core::textproc::tokenize;
use echolab_core::{AnnotatedDocument, LabelScheme, Ontology, RuleSet};

fn corpus(n: usize) -> Vec<AnnotatedDocument> {
    generate_synthetic(
        &Ontology::bundled(),
        &Templates::bundled(),
        n,
        7,
        &Profile::table2(),
    )
    .unwrap()
    .docs
}

fn text_and_rules(c: &mut Criterion) {
    let o = Ontology::bundled();
    let docs = corpus(200);
    let rules = RuleSet::demo(&o).unwrap();
    let tokenized: Vec<_> = docs.iter().map(|d| d.tokenize()).collect();

    c.bench_function("tokenize_200_reports", |b| {
        b.iter(|| {
            docs.iter()
                .map(|d| tokenize(black_box(&d.text)).len())
                .sum::<usize>()
        })
    });
    c.bench_function("rule_match_200_reports", |b| {
        b.iter(|| {
            tokenized
                .iter()
                .map(|t| rules.match_document(black_box(t)).len())
                .sum::<usize>()
        })
    });
    c.bench_function("suggest_spans_60_tokens", |b| {
        b.iter(|| suggest_spans(black_box(60), SuggesterConfig::default()).len())
    });
}

fn models(c: &mut Criterion) {
    let o = Ontology::bundled();
    let docs = corpus(300);
    let probe = &docs[0];
    let probe_tokens = probe.tokenize();

    let span_cfg = SpanModelConfig {
        max_steps: 100,
        eval_every: 50,
        patience: 50,
        ..SpanModelConfig::default()
    };
    let span = train_span_model(&docs, &o, "aortic_stenosis", &span_cfg).unwrap();
    c.bench_function("span_predict_one_report", |b| {
        b.iter(|| {
            span.predict(black_box(&probe_tokens), DEFAULT_THRESHOLD)
                .len()
        })
    });

    let bow_cfg = BowConfig {
        lda: LdaConfig {
            train_sweeps: 20,
            infer_sweeps: 10,
            ..LdaConfig::default()
        },
        gbdt: GbdtConfig {
            n_rounds: 20,
            ..GbdtConfig::default()
        },
        ..BowConfig::default()
    };
    let bow = train_bow(&docs, &o, &["aortic_stenosis"], LabelScheme::Full, &bow_cfg).unwrap();
    c.bench_function("bow_predict_one_report", |b| {
        b.iter(|| bow.predict(black_box(probe)).len())
    });

    let cnn_cfg = CnnConfig {
        epochs: 1,
        ..CnnConfig::default()
    };
    let cnn = train_cnn(&docs, &o, "aortic_stenosis", LabelScheme::Full, &cnn_cfg).unwrap();
    c.bench_function("cnn_predict_one_report", |b| {
        b.iter(|| cnn.predict(black_box(probe)))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = text_and_rules, models
}
criterion_main!(benches);
