use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use echolab_core::container::{read_header, ModelFile};
use echolab_core::corpus::{
    filter_reports, generate_synthetic, ingest_sources, label_distribution, span_stats, split,
    to_jsonl, Profile, Templates,
};
use echolab_core::doc::{
    collect_doc_labels, doc_labels_from_spans, train_bow, train_cnn, BowConfig, BowModel,
    CnnConfig, CnnModel,
};
use echolab_core::eval::{
    doc_eval, gold_doc_labels, render_report, score_spans, span_eval_matched, DocLabels,
    EvalReport, RangeClassifier, ReportFormat, ReportRow,
};
use echolab_core::rules::compile_rules;
use echolab_core::span::{
    predict_documents, train_span_sweep, SpanModel, SpanModelConfig, NEGATIVE_WEIGHTS,
};
use echolab_core::{AnnotatedDocument, LabelScheme, Ontology, RuleSet};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Cli, Command, EvalMode, ModelKind, TrainKind};
use crate::files::{
    atomic_write, check_version, load_corpus, load_ontology_arg, load_split, model_files,
    read_model, read_text, select, write_model, CliError, CliResult,
};
use crate::pool::{run_jobs, worker_count};

/// Optional per-model settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    span: SpanModelConfig,
    bow: BowConfig,
    cnn: CnnConfig,
}

#[derive(Serialize)]
struct SweepLogEntry<'a> {
    characteristic: &'a str,
    selected_weight: f64,
    runs: &'a [echolab_core::span::SweepEntry],
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ontology = load_ontology_arg(cli.ontology.as_deref())?;
    match cli.command {
        Command::Synth {
            n,
            seed,
            profile,
            templates,
            out,
        } => synth(&ontology, n, seed, &profile, templates.as_deref(), &out),
        Command::Ingest {
            inputs,
            filter,
            rules,
            out,
        } => ingest(&ontology, &inputs, filter, rules.as_deref(), &out),
        Command::Split {
            corpus,
            ratio,
            seed,
            out,
        } => {
            let docs = load_corpus(&corpus, &ontology)?;
            let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            let s = split(&ids, ratio, seed)?;
            info!(
                "split: {} train, {} test",
                s.train_ids.len(),
                s.test_ids.len()
            );
            atomic_write(&out, pretty(&s).as_bytes())
        }
        Command::Stats { corpus, out_dir } => {
            let docs = load_corpus(&corpus, &ontology)?;
            atomic_write(
                &out_dir.join("labels.csv"),
                label_distribution(&docs, &ontology).to_csv().as_bytes(),
            )?;
            atomic_write(
                &out_dir.join("spans.csv"),
                span_stats(&docs, &ontology).to_csv().as_bytes(),
            )
        }
        Command::Train {
            kind,
            corpus,
            split,
            seed,
            rules,
            config,
            characteristics,
            scheme,
            out_dir,
        } => {
            if kind == TrainKind::RuleCompile {
                return rule_compile(&ontology, rules.as_deref(), &out_dir);
            }
            let (Some(corpus), Some(split)) = (corpus, split) else {
                return Err(CliError::invalid("training needs --corpus and --split"));
            };
            let Some(seed) = seed else {
                return Err(CliError::invalid("training needs an explicit --seed"));
            };
            let config = match &config {
                Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
                    .map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?,
                None => TrainConfig::default(),
            };
            let chars = characteristic_list(&ontology, &characteristics)?;
            let docs = load_corpus(&corpus, &ontology)?;
            let train = select(&docs, &load_split(&split)?.train_ids)?;
            let job = TrainJob {
                ontology: &ontology,
                train: &train,
                characteristics: &chars,
                scheme: scheme.into(),
                seed,
                out_dir: &out_dir,
            };
            match kind {
                TrainKind::Span => job.span(config.span),
                TrainKind::Bow => job.bow(config.bow),
                TrainKind::Cnn => job.cnn(config.cnn),
                TrainKind::RuleCompile => unreachable!(),
            }
        }
        Command::Predict {
            kind,
            models,
            corpus,
            split,
            threshold,
            scheme,
            out,
        } => {
            check_threshold(threshold)?;
            let docs = eval_docs(&ontology, &corpus, split.as_deref())?;
            let scheme = scheme.into();
            let bytes = match kind {
                ModelKind::Rules | ModelKind::Span => {
                    let source = SpanSource::load(kind, &models, &ontology)?;
                    to_jsonl(&source.predict(&docs, threshold, &ontology)?)
                }
                ModelKind::Bow | ModelKind::Cnn => {
                    let source = DocSource::load(kind, &models, &ontology, scheme)?;
                    pretty(&source.predict(&docs))
                }
            };
            atomic_write(&out, bytes.as_bytes())
        }
        Command::Eval {
            mode,
            corpus,
            split,
            kind,
            models,
            predictions,
            threshold,
            scheme,
            out_dir,
        } => {
            check_threshold(threshold)?;
            let gold = eval_docs(&ontology, &corpus, split.as_deref())?;
            let input = EvalInput {
                kind,
                models: models.as_deref(),
                predictions: predictions.as_deref(),
            };
            let report = evaluate(&ontology, mode, &gold, &input, threshold, scheme.into())?;
            let stem = format!("{}{}", mode_name(mode), scheme_tag(scheme.into()));
            let md = render_report(&report, ReportFormat::Markdown);
            atomic_write(
                &out_dir.join(format!("{stem}.csv")),
                render_report(&report, ReportFormat::Csv).as_bytes(),
            )?;
            atomic_write(&out_dir.join(format!("{stem}.md")), md.as_bytes())?;
            print!("{md}");
            Ok(())
        }
        Command::Describe { model } => {
            let f = std::fs::File::open(&model).map_err(|e| CliError::io(&model, e))?;
            let header =
                read_header(BufReader::new(f)).map_err(|e| CliError::from_core(&model, e))?;
            println!("{}", pretty(&header).trim_end());
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn check_threshold(t: f64) -> CliResult<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(CliError::invalid(format!(
            "threshold must be a finite non-negative number, got {t}"
        )));
    }
    Ok(())
}

fn scheme_tag(scheme: LabelScheme) -> &'static str {
    match scheme {
        LabelScheme::Full => "",
        LabelScheme::Simplified => "-simplified",
    }
}

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::SpanE2e => "span-e2e",
        EvalMode::SpanMatched => "span-matched",
        EvalMode::Doc => "doc",
        EvalMode::DocViaSpans => "doc-via-spans",
    }
}

fn characteristic_list(ontology: &Ontology, requested: &[String]) -> CliResult<Vec<String>> {
    if requested.is_empty() {
        return Ok(ontology.ids().map(str::to_string).collect());
    }
    for c in requested {
        ontology.require(c)?;
    }
    Ok(requested.to_vec())
}

/// The whole corpus, or only the test side of `split`.
fn eval_docs(
    ontology: &Ontology,
    corpus: &Path,
    split: Option<&Path>,
) -> CliResult<Vec<AnnotatedDocument>> {
    let docs = load_corpus(corpus, ontology)?;
    match split {
        Some(p) => select(&docs, &load_split(p)?.test_ids),
        None => Ok(docs),
    }
}

fn synth(
    ontology: &Ontology,
    n: usize,
    seed: u64,
    profile: &str,
    templates: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let templates = match templates {
        Some(p) => Templates::parse(&read_text(p)?).map_err(|e| CliError::from_core(p, e))?,
        None => Templates::bundled(),
    };
    let profile = match profile {
        "table2" => Profile::table2(),
        "uniform" => Profile::uniform(ontology),
        path => {
            let p = Path::new(path);
            Profile::parse(&read_text(p)?).map_err(|e| CliError::from_core(p, e))?
        }
    };
    let corpus = generate_synthetic(ontology, &templates, n, seed, &profile)?;
    info!("synth: {} documents", corpus.docs.len());
    atomic_write(out, to_jsonl(&corpus.docs).as_bytes())
}

fn load_rule_source(path: Option<&Path>) -> CliResult<String> {
    match path {
        Some(p) => read_text(p),
        None => Ok(RuleSet::demo_source().to_string()),
    }
}

fn ingest(
    ontology: &Ontology,
    inputs: &[PathBuf],
    filter: bool,
    rules: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let mut sources = Vec::with_capacity(inputs.len());
    for p in inputs {
        let f = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
        sources.push((p.display().to_string(), BufReader::new(f)));
    }
    let mut docs = ingest_sources(sources, ontology)?;
    let read = docs.len();
    if filter {
        let rules = compile_rules(&load_rule_source(rules)?, ontology)?;
        docs = filter_reports(docs, &rules);
    }
    info!("ingest: {read} documents read, {} written", docs.len());
    atomic_write(out, to_jsonl(&docs).as_bytes())
}

fn rule_compile(ontology: &Ontology, rules: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let source = load_rule_source(rules)?;
    let set = compile_rules(&source, ontology).map_err(|e| match rules {
        Some(p) => CliError::from_core(p, e),
        None => e.into(),
    })?;
    let counts = set.pattern_counts();
    for (c, n) in &counts {
        println!("{c}\t{n}");
    }
    let file = ModelFile::new(
        "rules",
        ontology.version,
        "",
        json!({ "source": source, "pattern_counts": counts }),
        Vec::new(),
    );
    write_model(&out_dir.join("rules.model"), &file)
}

struct TrainJob<'a> {
    ontology: &'a Ontology,
    train: &'a [AnnotatedDocument],
    characteristics: &'a [String],
    scheme: LabelScheme,
    seed: u64,
    out_dir: &'a Path,
}

impl TrainJob<'_> {
    fn span(&self, mut config: SpanModelConfig) -> CliResult<()> {
        if self.scheme != LabelScheme::Full {
            return Err(CliError::invalid(
                "span models are trained on the full label scheme",
            ));
        }
        config.seed = self.seed;
        let workers = worker_count();
        info!(
            "span: {} characteristics on {workers} worker(s)",
            self.characteristics.len()
        );
        let results = run_jobs(self.characteristics.len(), workers, |i| {
            let c = &self.characteristics[i];
            let t0 = Instant::now();
            let model = train_span_sweep(self.train, self.ontology, c, &config, &NEGATIVE_WEIGHTS);
            info!("span {c}: trained in {:.1}s", t0.elapsed().as_secs_f64());
            model
        });
        let mut log = Vec::new();
        let mut models = Vec::new();
        for (c, r) in self.characteristics.iter().zip(results) {
            let m = r.map_err(|e| CliError::invalid(format!("`{c}`: {e}")))?;
            models.push(m);
        }
        for m in &models {
            write_model(
                &self
                    .out_dir
                    .join(format!("span-{}.model", m.characteristic)),
                &m.to_model_file(),
            )?;
            log.push(SweepLogEntry {
                characteristic: &m.characteristic,
                selected_weight: m.config.negative_weight,
                runs: &m.sweep,
            });
        }
        atomic_write(
            &self.out_dir.join("span-sweep.json"),
            pretty(&json!({ "seed": self.seed, "sweeps": log })).as_bytes(),
        )
    }

    fn bow(&self, config: BowConfig) -> CliResult<()> {
        let config = config.with_seed(self.seed);
        let chars: Vec<&str> = self.characteristics.iter().map(String::as_str).collect();
        let t0 = Instant::now();
        let model = train_bow(self.train, self.ontology, &chars, self.scheme, &config)?;
        info!("bow: trained in {:.1}s", t0.elapsed().as_secs_f64());
        let name = format!("bow{}.model", scheme_tag(self.scheme));
        write_model(&self.out_dir.join(name), &model.to_model_file())
    }

    fn cnn(&self, mut config: CnnConfig) -> CliResult<()> {
        config.seed = self.seed;
        let results = run_jobs(self.characteristics.len(), worker_count(), |i| {
            let c = &self.characteristics[i];
            let t0 = Instant::now();
            let model = train_cnn(self.train, self.ontology, c, self.scheme, &config);
            info!("cnn {c}: trained in {:.1}s", t0.elapsed().as_secs_f64());
            model
        });
        let mut models = Vec::new();
        for (c, r) in self.characteristics.iter().zip(results) {
            models.push(r.map_err(|e| CliError::invalid(format!("`{c}`: {e}")))?);
        }
        for m in &models {
            let name = format!("cnn{}-{}.model", scheme_tag(self.scheme), m.characteristic);
            write_model(&self.out_dir.join(name), &m.to_model_file())?;
        }
        Ok(())
    }
}

/// Span extractors loaded from a model directory.
enum SpanSource {
    Rules(RuleSet),
    Span(Vec<SpanModel>),
}

impl SpanSource {
    fn load(kind: ModelKind, dir: &Path, ontology: &Ontology) -> CliResult<SpanSource> {
        match kind {
            ModelKind::Rules => {
                let path = dir.join("rules.model");
                let file = read_model(&path)?;
                file.expect_kind("rules")
                    .map_err(|e| CliError::from_core(&path, e))?;
                check_version(&path, &file, ontology)?;
                let source = file.header.meta["source"].as_str().ok_or_else(|| {
                    CliError::invalid(format!("{}: missing rule source", path.display()))
                })?;
                Ok(SpanSource::Rules(
                    compile_rules(source, ontology).map_err(|e| CliError::from_core(&path, e))?,
                ))
            }
            ModelKind::Span => {
                let mut models = Vec::new();
                for path in model_files(dir, "span-")? {
                    let file = read_model(&path)?;
                    check_version(&path, &file, ontology)?;
                    let m = SpanModel::from_model_file(&file)
                        .map_err(|e| CliError::from_core(&path, e))?;
                    ontology.require(&m.characteristic)?;
                    models.push(m);
                }
                Ok(SpanSource::Span(models))
            }
            _ => Err(CliError::invalid(
                "span predictions need --kind rules or --kind span",
            )),
        }
    }

    fn characteristics(&self, ontology: &Ontology) -> Vec<String> {
        match self {
            SpanSource::Rules(_) => ontology.ids().map(str::to_string).collect(),
            SpanSource::Span(models) => models.iter().map(|m| m.characteristic.clone()).collect(),
        }
    }

    fn predict(
        &self,
        docs: &[AnnotatedDocument],
        threshold: f64,
        ontology: &Ontology,
    ) -> CliResult<Vec<AnnotatedDocument>> {
        let out = match self {
            SpanSource::Rules(rules) => docs
                .iter()
                .map(|d| {
                    let spans = rules.match_document(&d.tokenize());
                    AnnotatedDocument::new(d.doc_id.clone(), d.text.clone(), spans, ontology)
                })
                .collect::<Result<Vec<_>, _>>()?,
            SpanSource::Span(models) => predict_documents(docs, models, threshold, ontology)?,
        };
        Ok(out)
    }

    fn matched(&self, gold: &[AnnotatedDocument], ontology: &Ontology) -> CliResult<EvalReport> {
        let mut report = EvalReport::new("Span classification on gold spans");
        for c in self.characteristics(ontology) {
            let classifier: &dyn RangeClassifier = match self {
                SpanSource::Rules(r) => r,
                SpanSource::Span(models) => models.iter().find(|m| m.characteristic == c).unwrap(),
            };
            let table = span_eval_matched(gold, classifier, &c)?;
            report.push(ReportRow::from_table(&c, &table));
        }
        Ok(report)
    }
}

/// Direct document classifiers loaded from a model directory.
enum DocSource {
    Bow(BowModel),
    Cnn(Vec<CnnModel>),
}

impl DocSource {
    /// Prefers models trained on `scheme`; falls back to full-scheme models,
    /// whose predictions are then mapped at evaluation time.
    fn load(
        kind: ModelKind,
        dir: &Path,
        ontology: &Ontology,
        scheme: LabelScheme,
    ) -> CliResult<DocSource> {
        match kind {
            ModelKind::Bow => {
                let preferred = dir.join(format!("bow{}.model", scheme_tag(scheme)));
                let path = if preferred.exists() {
                    preferred
                } else {
                    dir.join("bow.model")
                };
                let file = read_model(&path)?;
                check_version(&path, &file, ontology)?;
                Ok(DocSource::Bow(
                    BowModel::from_model_file(&file).map_err(|e| CliError::from_core(&path, e))?,
                ))
            }
            ModelKind::Cnn => {
                let mut models = Vec::new();
                for path in model_files(dir, "cnn")? {
                    let file = read_model(&path)?;
                    check_version(&path, &file, ontology)?;
                    models.push(
                        CnnModel::from_model_file(&file)
                            .map_err(|e| CliError::from_core(&path, e))?,
                    );
                }
                let wanted = if models.iter().any(|m| m.scheme == scheme) {
                    scheme
                } else {
                    LabelScheme::Full
                };
                models.retain(|m| m.scheme == wanted);
                if models.is_empty() {
                    return Err(CliError::invalid(format!(
                        "{}: no usable cnn models",
                        dir.display()
                    )));
                }
                Ok(DocSource::Cnn(models))
            }
            _ => Err(CliError::invalid(
                "document predictions need --kind bow or --kind cnn",
            )),
        }
    }

    fn characteristics(&self) -> Vec<String> {
        match self {
            DocSource::Bow(m) => m.heads.keys().cloned().collect(),
            DocSource::Cnn(models) => models.iter().map(|m| m.characteristic.clone()).collect(),
        }
    }

    fn predict(&self, docs: &[AnnotatedDocument]) -> DocLabels {
        match self {
            DocSource::Bow(m) => docs
                .iter()
                .map(|d| (d.doc_id.clone(), m.predict(d)))
                .collect(),
            DocSource::Cnn(models) => {
                let preds: Vec<(&str, &str, _)> = docs
                    .iter()
                    .flat_map(|d| {
                        models.iter().map(move |m| {
                            (d.doc_id.as_str(), m.characteristic.as_str(), m.predict(d))
                        })
                    })
                    .collect();
                collect_doc_labels(preds)
            }
        }
    }
}

struct EvalInput<'a> {
    kind: Option<ModelKind>,
    models: Option<&'a Path>,
    predictions: Option<&'a Path>,
}

impl EvalInput<'_> {
    fn models(&self) -> CliResult<&Path> {
        self.models
            .ok_or_else(|| CliError::invalid("this evaluation needs --models (or --predictions)"))
    }
}

fn evaluate(
    ontology: &Ontology,
    mode: EvalMode,
    gold: &[AnnotatedDocument],
    input: &EvalInput,
    threshold: f64,
    scheme: LabelScheme,
) -> CliResult<EvalReport> {
    let span_mode = matches!(mode, EvalMode::SpanE2e | EvalMode::SpanMatched);
    if span_mode && scheme != LabelScheme::Full {
        return Err(CliError::invalid(
            "span evaluation uses the full label scheme",
        ));
    }
    let span_kind = input.kind.unwrap_or(ModelKind::Span);
    match mode {
        EvalMode::SpanE2e => {
            let (predicted, chars) = match input.predictions {
                Some(p) => (
                    load_corpus(p, ontology)?,
                    ontology.ids().map(str::to_string).collect(),
                ),
                None => {
                    let source = SpanSource::load(span_kind, input.models()?, ontology)?;
                    (
                        source.predict(gold, threshold, ontology)?,
                        source.characteristics(ontology),
                    )
                }
            };
            let mut report = EvalReport::new("End-to-end span evaluation");
            for c in chars {
                report.push(ReportRow::from_span_scores(
                    &c,
                    &score_spans(gold, &predicted, &c)?,
                ));
            }
            Ok(report)
        }
        EvalMode::SpanMatched => {
            if input.predictions.is_some() {
                return Err(CliError::invalid(
                    "span-matched queries models on gold ranges; pass --models",
                ));
            }
            SpanSource::load(span_kind, input.models()?, ontology)?.matched(gold, ontology)
        }
        EvalMode::Doc => {
            let (predicted, chars) = match input.predictions {
                Some(p) => {
                    let labels: DocLabels = serde_json::from_str(&read_text(p)?)
                        .map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
                    (labels, ontology.ids().map(str::to_string).collect())
                }
                None => {
                    let kind = input.kind.unwrap_or(ModelKind::Bow);
                    let source = DocSource::load(kind, input.models()?, ontology, scheme)?;
                    (source.predict(gold), source.characteristics())
                }
            };
            doc_report("Document classification", gold, &predicted, &chars, scheme)
        }
        EvalMode::DocViaSpans => {
            let source = SpanSource::load(span_kind, input.models()?, ontology)?;
            let predicted =
                doc_labels_from_spans(&source.predict(gold, threshold, ontology)?, ontology);
            doc_report(
                "Document classification via span labels",
                gold,
                &predicted,
                &source.characteristics(ontology),
                scheme,
            )
        }
    }
}

fn doc_report(
    title: &str,
    gold: &[AnnotatedDocument],
    predicted: &DocLabels,
    characteristics: &[String],
    scheme: LabelScheme,
) -> CliResult<EvalReport> {
    let gold_labels = gold_doc_labels(gold);
    let title = match scheme {
        LabelScheme::Full => title.to_string(),
        LabelScheme::Simplified => format!("{title} (simplified labels)"),
    };
    let mut report = EvalReport::new(title);
    for c in characteristics {
        report.push(ReportRow::from_table(
            c,
            &doc_eval(&gold_labels, predicted, c, scheme)?,
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_tables_are_optional() {
        let cfg: TrainConfig = toml::from_str("[span]\nmax_steps = 10\n").unwrap();
        assert_eq!(cfg.span.max_steps, 10);
        assert_eq!(cfg.cnn, CnnConfig::default());
        assert!(toml::from_str::<TrainConfig>("[spam]\n").is_err());
    }
}
