//! Span categorizer: every n-gram in a length range is embedded, encoded and
//! classified into one of the characteristic's labels or the negative class.

mod net;
mod suggest;

use std::collections::BTreeMap;
use std::ops::Range;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{ModelFile, Tensor};
use crate::corpus::{AnnotatedDocument, SpanAnnotation};
use crate::error::{Error, Result};
use crate::eval::{align_spans, Averaging, ConfusionTable, LabelledRange, RangeClassifier};
use crate::nn::Adam;
use crate::ontology::{Ontology, SeverityLabel};
use crate::textproc::TokenizedDocument;

pub use net::{DocFeatures, Net, Trace};
pub use suggest::{suggest_spans, SuggesterConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const NEGATIVE_WEIGHTS: [f64; 3] = [0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanModelConfig {
    /// Hash table rows for NORM, PREFIX, SUFFIX and SHAPE.
    pub embed_rows: [usize; 4],
    pub width: usize,
    pub encoder_depth: usize,
    pub window: usize,
    pub maxout_pieces: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub max_steps: usize,
    pub patience: usize,
    pub eval_every: usize,
    /// Share of the training documents held out for early stopping.
    pub eval_fraction: f64,
    /// Documents per optimizer step.
    pub batch_docs: usize,
    pub negative_weight: f64,
    pub suggester: SuggesterConfig,
    pub seed: u64,
}

impl Default for SpanModelConfig {
    fn default() -> Self {
        SpanModelConfig {
            embed_rows: [5000, 1000, 2500, 2500],
            width: 96,
            encoder_depth: 4,
            window: 1,
            maxout_pieces: 3,
            hidden: 96,
            dropout: 0.1,
            lr: 0.001,
            max_steps: 20_000,
            patience: 1600,
            eval_every: 200,
            eval_fraction: 0.1,
            batch_docs: 1,
            negative_weight: 1.0,
            suggester: SuggesterConfig::default(),
            seed: 0,
        }
    }
}

impl SpanModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("encoder_depth", self.encoder_depth),
            ("maxout_pieces", self.maxout_pieces),
            ("hidden", self.hidden),
            ("max_steps", self.max_steps),
            ("patience", self.patience),
            ("eval_every", self.eval_every),
            ("batch_docs", self.batch_docs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!(
                    "span config: {name} must be positive"
                )));
            }
        }
        if self.embed_rows.contains(&0) {
            return Err(Error::invalid(
                "span config: embedding rows must be positive",
            ));
        }
        if !self.width.is_multiple_of(4) {
            return Err(Error::invalid(
                "span config: width must split into four attribute tables",
            ));
        }
        if self.maxout_pieces > u8::MAX as usize {
            return Err(Error::invalid("span config: too many maxout pieces"));
        }
        if !(self.negative_weight > 0.0 && self.negative_weight <= 1.0) {
            return Err(Error::invalid(
                "span config: negative_weight must lie in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.lr > 0.0) {
            return Err(Error::invalid(
                "span config: dropout must lie in [0, 1) and lr be positive",
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::invalid(
                "span config: eval_fraction must lie in (0, 1)",
            ));
        }
        SuggesterConfig::new(self.suggester.min_len, self.suggester.max_len)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub loss: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub evaluations: Vec<EvalPoint>,
    pub best_step: usize,
    pub best_f1: f64,
    pub steps: usize,
    pub train_docs: usize,
    pub eval_docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub negative_weight: f64,
    pub weighted_f1: f64,
    pub best_step: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct SpanModel {
    pub config: SpanModelConfig,
    pub characteristic: String,
    pub ontology_version: u32,
    /// Index 0 is the negative class (`NoLabel`).
    pub classes: Vec<SeverityLabel>,
    pub net: Net<f32>,
    pub log: TrainingLog,
    pub sweep: Vec<SweepEntry>,
}

/// A scored token range produced by [`SpanModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRange {
    pub range: Range<usize>,
    pub label: SeverityLabel,
    pub probability: f32,
}

#[derive(Serialize, Deserialize)]
struct SpanMeta {
    config: SpanModelConfig,
    classes: Vec<SeverityLabel>,
    log: TrainingLog,
    sweep: Vec<SweepEntry>,
}

impl SpanModel {
    pub fn new(config: SpanModelConfig, ontology: &Ontology, characteristic: &str) -> Result<Self> {
        config.validate()?;
        let c = ontology.require(characteristic)?;
        let mut classes = vec![SeverityLabel::NoLabel];
        classes.extend(
            c.labels
                .iter()
                .copied()
                .filter(|&l| l != SeverityLabel::NoLabel),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Net::new(&config, classes.len(), &mut rng);
        Ok(SpanModel {
            config,
            characteristic: characteristic.to_string(),
            ontology_version: ontology.version,
            classes,
            net,
            log: TrainingLog::default(),
            sweep: Vec::new(),
        })
    }

    pub fn features(&self, doc: &TokenizedDocument) -> DocFeatures {
        DocFeatures::new(doc, self.config.embed_rows)
    }

    /// Probability rows for `ranges`, one per range.
    pub fn probabilities(&self, doc: &TokenizedDocument, ranges: &[Range<usize>]) -> Vec<Vec<f32>> {
        if ranges.is_empty() {
            return Vec::new();
        }
        let feats = self.features(doc);
        let trace = self.net.forward::<ChaCha8Rng>(&feats, ranges, None);
        trace
            .probs
            .chunks(self.classes.len())
            .map(|r| r.to_vec())
            .collect()
    }

    fn resolve(&self, ranges: &[Range<usize>], probs: &[f32], threshold: f64) -> Vec<ScoredRange> {
        let c = self.classes.len();
        let mut candidates: Vec<ScoredRange> = Vec::new();
        for (i, r) in ranges.iter().enumerate() {
            let row = &probs[i * c..(i + 1) * c];
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if best != 0 && f64::from(row[best]) >= threshold {
                candidates.push(ScoredRange {
                    range: r.clone(),
                    label: self.classes[best],
                    probability: row[best],
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then(b.range.len().cmp(&a.range.len()))
                .then(a.range.start.cmp(&b.range.start))
        });
        let mut taken = vec![false; ranges.iter().map(|r| r.end).max().unwrap_or(0)];
        let mut kept = Vec::new();
        for cand in candidates {
            if taken[cand.range.clone()].iter().any(|&t| t) {
                continue;
            }
            taken[cand.range.clone()].iter_mut().for_each(|t| *t = true);
            kept.push(cand);
        }
        kept.sort_by_key(|s| s.range.start);
        kept
    }

    fn predict_features(&self, feats: &DocFeatures, threshold: f64) -> Vec<ScoredRange> {
        let ranges = suggest_spans(feats.len(), self.config.suggester);
        if ranges.is_empty() {
            return Vec::new();
        }
        let trace = self.net.forward::<ChaCha8Rng>(feats, &ranges, None);
        self.resolve(&ranges, &trace.probs, threshold)
    }

    /// Non-overlapping labelled ranges whose top class is not negative and
    /// whose probability reaches `threshold`.
    pub fn predict(&self, doc: &TokenizedDocument, threshold: f64) -> Vec<ScoredRange> {
        self.predict_features(&self.features(doc), threshold)
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = SpanMeta {
            config: self.config.clone(),
            classes: self.classes.clone(),
            log: self.log.clone(),
            sweep: self.sweep.clone(),
        };
        let tensors = self
            .net
            .params
            .iter()
            .map(|p| Tensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.clone(),
            })
            .collect();
        ModelFile::new(
            "span",
            self.ontology_version,
            &self.characteristic,
            serde_json::to_value(meta).expect("span meta serializes"),
            tensors,
        )
    }

    pub fn from_model_file(file: &ModelFile) -> Result<SpanModel> {
        file.expect_kind("span")?;
        let meta: SpanMeta = serde_json::from_value(file.header.meta.clone())
            .map_err(|e| Error::Model(format!("span header: {e}")))?;
        meta.config.validate()?;
        if meta.classes.first() != Some(&SeverityLabel::NoLabel) {
            return Err(Error::Model("span classes must start with NoLabel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Net::<f32>::new(&meta.config, meta.classes.len(), &mut rng);
        fill_params(&mut net.params, file)?;
        Ok(SpanModel {
            config: meta.config,
            characteristic: file.header.characteristic.clone(),
            ontology_version: file.header.ontology_version,
            classes: meta.classes,
            net,
            log: meta.log,
            sweep: meta.sweep,
        })
    }
}

pub(crate) fn fill_params(params: &mut [crate::nn::Param<f32>], file: &ModelFile) -> Result<()> {
    if file.tensors.len() != params.len() {
        return Err(Error::Model(format!(
            "expected {} tensors, found {}",
            params.len(),
            file.tensors.len()
        )));
    }
    for (p, t) in params.iter_mut().zip(&file.tensors) {
        if p.name != t.name || p.shape != t.shape {
            return Err(Error::Model(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                t.name, t.shape, p.name, p.shape
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "tensor `{}` has non-finite values",
                t.name
            )));
        }
        p.value.copy_from_slice(&t.data);
    }
    Ok(())
}

impl RangeClassifier for SpanModel {
    fn classify_range(
        &self,
        doc: &TokenizedDocument,
        _characteristic: &str,
        range: Range<usize>,
    ) -> SeverityLabel {
        let probs = self.probabilities(doc, std::slice::from_ref(&range));
        let row = &probs[0];
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        self.classes[best]
    }
}

/// Spans predicted by every model, sorted by offset.
pub fn predict_spans(
    doc: &TokenizedDocument,
    models: &[SpanModel],
    threshold: f64,
) -> Vec<SpanAnnotation> {
    let mut out = Vec::new();
    if doc.is_empty() {
        return out;
    }
    for m in models {
        for s in m.predict(doc, threshold) {
            let (start, end) = doc.char_span(s.range);
            out.push(SpanAnnotation {
                start,
                end,
                characteristic: m.characteristic.clone(),
                label: s.label,
            });
        }
    }
    out.sort_by(|a, b| {
        (a.start, a.end, &a.characteristic).cmp(&(b.start, b.end, &b.characteristic))
    });
    out
}

/// Copies of `docs` carrying predicted spans instead of gold ones.
pub fn predict_documents(
    docs: &[AnnotatedDocument],
    models: &[SpanModel],
    threshold: f64,
    ontology: &Ontology,
) -> Result<Vec<AnnotatedDocument>> {
    docs.iter()
        .map(|d| {
            let spans = predict_spans(&d.tokenize(), models, threshold);
            AnnotatedDocument::new(d.doc_id.clone(), d.text.clone(), spans, ontology)
        })
        .collect()
}

struct Example {
    feats: DocFeatures,
    gold: Vec<LabelledRange>,
    /// Class index per gold range.
    gold_class: Vec<usize>,
}

impl Example {
    fn targets(&self, ranges: &[Range<usize>]) -> Vec<usize> {
        let mut t = vec![0; ranges.len()];
        for (g, &c) in self.gold.iter().zip(&self.gold_class) {
            if let Some(i) = ranges.iter().position(|r| *r == g.range) {
                t[i] = c;
            }
        }
        t
    }
}

fn weighted_f1(model: &SpanModel, eval: &[Example]) -> f64 {
    let mut table = ConfusionTable::with_negative(SeverityLabel::NoLabel);
    for ex in eval {
        let pred: Vec<LabelledRange> = model
            .predict_features(&ex.feats, DEFAULT_THRESHOLD)
            .into_iter()
            .map(|s| LabelledRange {
                range: s.range,
                label: s.label,
            })
            .collect();
        for (g, p) in align_spans(&ex.gold, &pred) {
            table.add(
                g.map_or(SeverityLabel::NoLabel, |i| ex.gold[i].label),
                p.map_or(SeverityLabel::NoLabel, |i| pred[i].label),
            );
        }
    }
    table.prf(Averaging::Weighted).map_or(0.0, |p| p.f1)
}

/// Trains one characteristic's model with early stopping on a held-out
/// shard of `docs` and returns the best checkpoint.
pub fn train_span_model(
    docs: &[AnnotatedDocument],
    ontology: &Ontology,
    characteristic: &str,
    config: &SpanModelConfig,
) -> Result<SpanModel> {
    let mut model = SpanModel::new(config.clone(), ontology, characteristic)?;
    if docs.len() < 2 {
        return Err(Error::Training(
            "span training needs at least two documents".into(),
        ));
    }
    let class_of: BTreeMap<SeverityLabel, usize> = model
        .classes
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();

    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001));
    let n_eval =
        ((docs.len() as f64 * config.eval_fraction).round() as usize).clamp(1, docs.len() - 1);
    let (eval_idx, train_idx) = order.split_at(n_eval);

    let mut skipped = 0usize;
    let build = |idx: &[usize], skipped: &mut usize| -> Vec<Example> {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        sorted
            .into_iter()
            .map(|i| {
                let d = &docs[i];
                let tokens = d.tokenize();
                let mut gold = Vec::new();
                let mut gold_class = Vec::new();
                for s in d.spans_for(characteristic) {
                    let Some(range) = tokens.token_range(s.start, s.end) else {
                        continue;
                    };
                    if range.len() > config.suggester.max_len
                        || range.len() < config.suggester.min_len
                    {
                        *skipped += 1;
                    }
                    gold_class.push(class_of[&s.label]);
                    gold.push(LabelledRange {
                        range,
                        label: s.label,
                    });
                }
                Example {
                    feats: DocFeatures::new(&tokens, config.embed_rows),
                    gold,
                    gold_class,
                }
            })
            .collect()
    };
    let train = build(train_idx, &mut skipped);
    let eval = build(eval_idx, &mut skipped);
    if skipped > 0 {
        warn!("{characteristic}: {skipped} gold spans fall outside the suggester range");
    }
    let mut per_class = vec![0usize; model.classes.len()];
    for ex in &train {
        for &c in &ex.gold_class {
            per_class[c] += 1;
        }
    }
    if per_class.iter().sum::<usize>() == 0 {
        return Err(Error::Training(format!(
            "no positive spans for `{characteristic}`"
        )));
    }
    for (c, &n) in per_class.iter().enumerate().skip(1) {
        if n > 0 && n < 50 {
            warn!(
                "{characteristic}: only {n} training spans labelled {}",
                model.classes[c]
            );
        }
    }

    let mut opt = Adam::new(config.lr, &model.net.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0003);
    let mut queue: Vec<usize> = Vec::new();
    let mut best_values: Option<Vec<Vec<f32>>> = None;
    let mut log = TrainingLog {
        best_f1: -1.0,
        train_docs: train.len(),
        eval_docs: eval.len(),
        ..TrainingLog::default()
    };
    let mut loss_acc = 0.0;
    let mut loss_steps = 0usize;
    let mut step = 0;
    while step < config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_docs);
        while batch.len() < config.batch_docs {
            if queue.is_empty() {
                queue = (0..train.len()).collect();
                queue.shuffle(&mut shuffle_rng);
                queue.reverse();
            }
            batch.push(queue.pop().unwrap());
        }
        let suggestions: Vec<Vec<Range<usize>>> = batch
            .iter()
            .map(|&i| suggest_spans(train[i].feats.len(), config.suggester))
            .collect();
        let norm = batch.len() as f64;
        let mut loss = 0.0;
        for (&i, ranges) in batch.iter().zip(&suggestions) {
            if ranges.is_empty() {
                continue;
            }
            let ex = &train[i];
            let targets = ex.targets(ranges);
            let trace = model.net.forward(&ex.feats, ranges, Some(&mut dropout_rng));
            loss += Net::loss(
                &trace,
                model.classes.len(),
                &targets,
                config.negative_weight,
                norm,
            );
            model.net.backward(
                &ex.feats,
                ranges,
                &trace,
                &targets,
                config.negative_weight,
                norm,
            );
        }
        step += 1;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "{characteristic}: non-finite loss at step {step}"
            )));
        }
        opt.update(&mut model.net.params);
        loss_acc += loss;
        loss_steps += 1;

        if step % config.eval_every == 0 || step == config.max_steps {
            let f1 = weighted_f1(&model, &eval);
            let mean_loss = loss_acc / loss_steps as f64;
            debug!("{characteristic} step {step}: loss {mean_loss:.5} eval F1 {f1:.4}");
            log.evaluations.push(EvalPoint {
                step,
                loss: mean_loss,
                weighted_f1: f1,
            });
            loss_acc = 0.0;
            loss_steps = 0;
            if f1 > log.best_f1 {
                log.best_f1 = f1;
                log.best_step = step;
                best_values = Some(model.net.params.iter().map(|p| p.value.clone()).collect());
                // A perfect score cannot be beaten, so waiting out the
                // patience window would return this same checkpoint.
                if f1 >= 1.0 {
                    break;
                }
            } else if step - log.best_step >= config.patience {
                break;
            }
        }
    }
    log.steps = step;
    if let Some(values) = best_values {
        for (p, v) in model.net.params.iter_mut().zip(values) {
            p.value = v;
        }
    }
    info!(
        "{characteristic} (negative weight {}): best eval F1 {:.4} at step {} of {}",
        config.negative_weight, log.best_f1, log.best_step, log.steps
    );
    model.log = log;
    Ok(model)
}

/// Trains one model per negative weight and keeps the one with the highest
/// held-out weighted F1 (earliest weight on ties).
pub fn train_span_sweep(
    docs: &[AnnotatedDocument],
    ontology: &Ontology,
    characteristic: &str,
    config: &SpanModelConfig,
    weights: &[f64],
) -> Result<SpanModel> {
    if weights.is_empty() {
        return Err(Error::invalid(
            "negative-weight sweep needs at least one weight",
        ));
    }
    let mut best: Option<SpanModel> = None;
    let mut entries = Vec::new();
    for &w in weights {
        let cfg = SpanModelConfig {
            negative_weight: w,
            ..config.clone()
        };
        let model = train_span_model(docs, ontology, characteristic, &cfg)?;
        entries.push(SweepEntry {
            negative_weight: w,
            weighted_f1: model.log.best_f1,
            best_step: model.log.best_step,
            steps: model.log.steps,
        });
        if best
            .as_ref()
            .is_none_or(|b| model.log.best_f1 > b.log.best_f1)
        {
            best = Some(model);
        }
    }
    let mut best = best.unwrap();
    info!(
        "{characteristic}: sweep picked negative weight {} (F1 {:.4})",
        best.config.negative_weight, best.log.best_f1
    );
    best.sweep = entries;
    Ok(best)
}
