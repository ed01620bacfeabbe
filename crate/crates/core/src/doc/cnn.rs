//! Document classifier: trainable word embeddings, 1-D convolutions over the
//! forward and the reversed token sequence, max-over-time pooling and a small
//! fully connected head.
//!
//! Convolutions are computed through per-word projections: every distinct
//! word id in a batch is multiplied once by all filter taps, and each window
//! sums the projected rows of its words.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::Vocabulary;
use super::{doc_classes, norm_tokens};
use crate::container::{ModelFile, Tensor};
use crate::corpus::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::linalg::{gemm, softmax_in_place, Real};
use crate::nn::{dropout_mask, Adam, Linear, Param};
use crate::ontology::{LabelScheme, Ontology, SeverityLabel};

pub const PAD: u32 = 0;
pub const OOV: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub hidden: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            vocab_size: 5000,
            embed_dim: 300,
            filters: 96,
            kernel_sizes: vec![3, 4, 5],
            hidden: 10,
            dropout: 0.2,
            max_len: 200,
            lr: 0.0025,
            batch_size: 128,
            epochs: 20,
            seed: 42,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("filters", self.filters),
            ("hidden", self.hidden),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("cnn {name} must be positive")));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return Err(Error::invalid("cnn kernel sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("cnn dropout must be in [0, 1)"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("cnn learning rate must be positive"));
        }
        Ok(())
    }
}

const BRANCHES: usize = 2;

#[derive(Debug, Clone)]
pub struct CnnNet<F> {
    pub params: Vec<Param<F>>,
    n_ids: usize,
    dim: usize,
    filters: usize,
    kernels: Vec<usize>,
    /// First projection column of each (branch, kernel) pair.
    offsets: Vec<usize>,
    n_cols: usize,
    hidden: Linear,
    output: Linear,
    dropout: f64,
}

const EMBED: usize = 0;
const CONV_W: usize = 1;
const CONV_B: usize = 2;

struct DocTrace {
    /// Batch-local row of each token's projection.
    locs: Vec<u32>,
    /// Winning window start of every pooled feature.
    argmax: Vec<u32>,
}

pub struct CnnTrace<F> {
    uniq: Vec<u32>,
    docs: Vec<DocTrace>,
    pooled: Vec<F>,
    mask: Option<Vec<F>>,
    feats: Vec<F>,
    hidden_pre: Vec<F>,
    hidden: Vec<F>,
    pub probs: Vec<F>,
}

impl<F: Real> CnnNet<F> {
    pub fn new<R: Rng>(cfg: &CnnConfig, n_ids: usize, n_classes: usize, rng: &mut R) -> Self {
        let mut offsets = Vec::new();
        let mut n_cols = 0;
        for _ in 0..BRANCHES {
            for &k in &cfg.kernel_sizes {
                offsets.push(n_cols);
                n_cols += k * cfg.filters;
            }
        }
        let n_pooled = BRANCHES * cfg.kernel_sizes.len() * cfg.filters;
        let mut params = Vec::new();
        let mut embed = Param::uniform("embed", &[n_ids, cfg.embed_dim], 0.1, rng);
        embed.value[..cfg.embed_dim].fill(F::ZERO);
        params.push(embed);
        let mean_k = cfg.kernel_sizes.iter().sum::<usize>() as f64 / cfg.kernel_sizes.len() as f64;
        let scale = (6.0 / (mean_k * cfg.embed_dim as f64 + cfg.filters as f64)).sqrt();
        params.push(Param::uniform(
            "conv.W",
            &[n_cols, cfg.embed_dim],
            scale,
            rng,
        ));
        params.push(Param::zeros("conv.b", &[n_pooled]));
        let hidden = Linear::init(&mut params, "hidden", n_pooled, cfg.hidden, rng);
        let output = Linear::init(&mut params, "output", cfg.hidden, n_classes, rng);
        CnnNet {
            params,
            n_ids,
            dim: cfg.embed_dim,
            filters: cfg.filters,
            kernels: cfg.kernel_sizes.clone(),
            offsets,
            n_cols,
            hidden,
            output,
            dropout: cfg.dropout,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.output.n_out
    }

    fn n_pooled(&self) -> usize {
        BRANCHES * self.kernels.len() * self.filters
    }

    /// Token ids of one document with trailing padding removed.
    fn real_tokens(ids: &[u32]) -> &[u32] {
        let end = ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1);
        &ids[..end]
    }

    pub fn forward<R: Rng>(&self, batch: &[&[u32]], rng: Option<&mut R>) -> CnnTrace<F> {
        let dim = self.dim;
        let nf = self.filters;
        let mut uniq: Vec<u32> = batch
            .iter()
            .flat_map(|d| Self::real_tokens(d).iter().copied())
            .filter(|&i| i != PAD)
            .collect();
        uniq.sort_unstable();
        uniq.dedup();
        assert!(
            uniq.last().is_none_or(|&i| (i as usize) < self.n_ids),
            "token id out of range"
        );

        let embed = &self.params[EMBED].value;
        let mut eu = Vec::with_capacity(uniq.len() * dim);
        for &i in &uniq {
            eu.extend_from_slice(&embed[i as usize * dim..(i as usize + 1) * dim]);
        }
        let mut q = vec![F::ZERO; uniq.len() * self.n_cols];
        gemm(
            uniq.len(),
            dim,
            self.n_cols,
            &eu,
            false,
            &self.params[CONV_W].value,
            true,
            F::ZERO,
            &mut q,
        );

        let n_pooled = self.n_pooled();
        let bias = &self.params[CONV_B].value;
        let mut pooled = vec![F::ZERO; batch.len() * n_pooled];
        let mut docs = Vec::with_capacity(batch.len());
        let mut acc = vec![F::ZERO; nf];
        for (d, ids) in batch.iter().enumerate() {
            // Padding ids inside the sequence map to no row (zero embedding).
            let locs: Vec<u32> = Self::real_tokens(ids)
                .iter()
                .map(|&i| {
                    if i == PAD {
                        u32::MAX
                    } else {
                        uniq.binary_search(&i).unwrap() as u32
                    }
                })
                .collect();
            let n = locs.len();
            let mut argmax = vec![0u32; n_pooled];
            let out = &mut pooled[d * n_pooled..(d + 1) * n_pooled];
            for b in 0..BRANCHES {
                for (ki, &k) in self.kernels.iter().enumerate() {
                    let slot = b * self.kernels.len() + ki;
                    let off = self.offsets[slot];
                    let fb = &bias[slot * nf..(slot + 1) * nf];
                    let best = &mut out[slot * nf..(slot + 1) * nf];
                    let best_at = &mut argmax[slot * nf..(slot + 1) * nf];
                    let positions = n.saturating_sub(k - 1).max(1);
                    for t in 0..positions {
                        acc.copy_from_slice(fb);
                        for j in 0..k.min(n.saturating_sub(t)) {
                            let pos = if b == 0 { t + j } else { n - 1 - (t + j) };
                            let loc = locs[pos];
                            if loc == u32::MAX {
                                continue;
                            }
                            let row = &q[loc as usize * self.n_cols + off + j * nf..][..nf];
                            for (a, &v) in acc.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        for f in 0..nf {
                            if t == 0 || acc[f] > best[f] {
                                best[f] = acc[f];
                                best_at[f] = t as u32;
                            }
                        }
                    }
                }
            }
            docs.push(DocTrace { locs, argmax });
        }

        let mut feats: Vec<F> = pooled.iter().map(|&v| v.max(F::ZERO)).collect();
        let mask = rng.filter(|_| self.dropout > 0.0).map(|rng| {
            let m: Vec<F> = dropout_mask(feats.len(), self.dropout, rng);
            for (f, &k) in feats.iter_mut().zip(&m) {
                *f = *f * k;
            }
            m
        });
        let hidden_pre = self.hidden.forward(&self.params, &feats, batch.len());
        let hidden: Vec<F> = hidden_pre.iter().map(|&v| v.max(F::ZERO)).collect();
        let mut probs = self.output.forward(&self.params, &hidden, batch.len());
        for row in probs.chunks_mut(self.output.n_out) {
            softmax_in_place(row);
        }
        CnnTrace {
            uniq,
            docs,
            pooled,
            mask,
            feats,
            hidden_pre,
            hidden,
            probs,
        }
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, trace: &CnnTrace<F>, targets: &[usize]) -> f64 {
        let c = self.output.n_out;
        targets
            .iter()
            .enumerate()
            .map(|(d, &y)| -trace.probs[d * c + y].to_f64().max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len() as f64
    }

    /// Accumulates gradients of [`CnnNet::loss`] into the parameters.
    pub fn backward(&mut self, batch: &[&[u32]], trace: &CnnTrace<F>, targets: &[usize]) {
        let c = self.output.n_out;
        let rows = batch.len();
        let inv = F::from_f64(1.0 / rows as f64);
        let mut dlogits = trace.probs.clone();
        for (d, &y) in targets.iter().enumerate() {
            dlogits[d * c + y] -= F::ONE;
        }
        dlogits.iter_mut().for_each(|v| *v = *v * inv);
        let mut dh = self
            .output
            .backward(&mut self.params, &trace.hidden, rows, &dlogits);
        for (g, &h) in dh.iter_mut().zip(&trace.hidden_pre) {
            if h <= F::ZERO {
                *g = F::ZERO;
            }
        }
        let mut dfeat = self
            .hidden
            .backward(&mut self.params, &trace.feats, rows, &dh);
        if let Some(mask) = &trace.mask {
            for (g, &m) in dfeat.iter_mut().zip(mask) {
                *g = *g * m;
            }
        }
        for (g, &p) in dfeat.iter_mut().zip(&trace.pooled) {
            if p <= F::ZERO {
                *g = F::ZERO;
            }
        }

        let nf = self.filters;
        let n_pooled = self.n_pooled();
        let mut dq = vec![F::ZERO; trace.uniq.len() * self.n_cols];
        {
            let dbias = &mut self.params[CONV_B].grad;
            for (d, doc) in trace.docs.iter().enumerate() {
                let g = &dfeat[d * n_pooled..(d + 1) * n_pooled];
                for (db, &v) in dbias.iter_mut().zip(g) {
                    *db += v;
                }
                let n = doc.locs.len();
                for b in 0..BRANCHES {
                    for (ki, &k) in self.kernels.iter().enumerate() {
                        let slot = b * self.kernels.len() + ki;
                        let off = self.offsets[slot];
                        for f in 0..nf {
                            let p = slot * nf + f;
                            if g[p] == F::ZERO {
                                continue;
                            }
                            let t = doc.argmax[p] as usize;
                            for j in 0..k.min(n.saturating_sub(t)) {
                                let pos = if b == 0 { t + j } else { n - 1 - (t + j) };
                                let loc = doc.locs[pos];
                                if loc != u32::MAX {
                                    dq[loc as usize * self.n_cols + off + j * nf + f] += g[p];
                                }
                            }
                        }
                    }
                }
            }
        }

        let dim = self.dim;
        let u = trace.uniq.len();
        if u == 0 {
            return;
        }
        let embed = &self.params[EMBED].value;
        let mut eu = Vec::with_capacity(u * dim);
        for &i in &trace.uniq {
            eu.extend_from_slice(&embed[i as usize * dim..(i as usize + 1) * dim]);
        }
        gemm(
            self.n_cols,
            u,
            dim,
            &dq,
            true,
            &eu,
            false,
            F::ONE,
            &mut self.params[CONV_W].grad,
        );
        let mut deu = vec![F::ZERO; u * dim];
        gemm(
            u,
            self.n_cols,
            dim,
            &dq,
            false,
            &self.params[CONV_W].value,
            false,
            F::ZERO,
            &mut deu,
        );
        let grad = &mut self.params[EMBED].grad;
        for (r, &i) in trace.uniq.iter().enumerate() {
            for (g, &v) in grad[i as usize * dim..(i as usize + 1) * dim]
                .iter_mut()
                .zip(&deu[r * dim..(r + 1) * dim])
            {
                *g += v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CnnLog {
    pub epoch_loss: Vec<f64>,
    pub train_docs: usize,
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub characteristic: String,
    pub ontology_version: u32,
    pub scheme: LabelScheme,
    pub classes: Vec<SeverityLabel>,
    pub vocab: Vocabulary,
    pub net: CnnNet<f32>,
    pub log: CnnLog,
}

#[derive(Serialize, Deserialize)]
struct CnnMeta {
    config: CnnConfig,
    scheme: LabelScheme,
    classes: Vec<SeverityLabel>,
    vocab: Vocabulary,
    log: CnnLog,
}

impl CnnModel {
    /// Vocabulary ids shifted past PAD and OOV, truncated to `max_len`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        encode(&self.vocab, tokens, self.config.max_len)
    }

    pub fn probabilities(&self, doc: &AnnotatedDocument) -> Vec<f32> {
        let ids = self.encode(&norm_tokens(doc));
        self.net.forward::<ChaCha8Rng>(&[&ids], None).probs
    }

    pub fn predict(&self, doc: &AnnotatedDocument) -> SeverityLabel {
        let p = self.probabilities(doc);
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = CnnMeta {
            config: self.config.clone(),
            scheme: self.scheme,
            classes: self.classes.clone(),
            vocab: self.vocab.clone(),
            log: self.log.clone(),
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
            "cnn",
            self.ontology_version,
            &self.characteristic,
            serde_json::to_value(meta).expect("cnn meta serializes"),
            tensors,
        )
    }

    pub fn from_model_file(file: &ModelFile) -> Result<CnnModel> {
        file.expect_kind("cnn")?;
        let meta: CnnMeta = serde_json::from_value(file.header.meta.clone())
            .map_err(|e| Error::Model(format!("cnn header: {e}")))?;
        meta.config.validate()?;
        if meta.classes.len() < 2 {
            return Err(Error::Model("cnn needs at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = CnnNet::new(
            &meta.config,
            meta.vocab.len() + 2,
            meta.classes.len(),
            &mut rng,
        );
        crate::span::fill_params(&mut net.params, file)?;
        Ok(CnnModel {
            config: meta.config,
            characteristic: file.header.characteristic.clone(),
            ontology_version: file.header.ontology_version,
            scheme: meta.scheme,
            classes: meta.classes,
            vocab: meta.vocab,
            net,
            log: meta.log,
        })
    }
}

fn encode<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S], max_len: usize) -> Vec<u32> {
    tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.get(t.as_ref()).map_or(OOV, |i| i as u32 + 2))
        .collect()
}

pub fn train_cnn(
    docs: &[AnnotatedDocument],
    ontology: &Ontology,
    characteristic: &str,
    scheme: LabelScheme,
    config: &CnnConfig,
) -> Result<CnnModel> {
    config.validate()?;
    let ch = ontology.require(characteristic)?;
    let classes = doc_classes(ch, scheme);
    let tokens: Vec<Vec<String>> = docs.iter().map(norm_tokens).collect();
    let vocab = Vocabulary::fit(&tokens, config.vocab_size, false);
    let ids: Vec<Vec<u32>> = tokens
        .iter()
        .map(|t| encode(&vocab, t, config.max_len))
        .collect();
    let targets: Vec<usize> = docs
        .iter()
        .map(|d| {
            let l = d.doc_label_under(characteristic, scheme);
            classes
                .iter()
                .position(|&c| c == l)
                .expect("document label is admissible")
        })
        .collect();
    let mut present: Vec<usize> = targets.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Training(format!(
            "`{characteristic}` needs at least two document classes in training"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = CnnNet::<f32>::new(config, vocab.len() + 2, classes.len(), &mut rng);
    let mut opt = Adam::new(config.lr, &net.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc0ff_0001);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc0ff_0002);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut log = CnnLog {
        train_docs: docs.len(),
        ..CnnLog::default()
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[u32]> = chunk.iter().map(|&i| ids[i].as_slice()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let trace = net.forward(&batch, Some(&mut dropout_rng));
            let loss = net.loss(&trace, &y);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "{characteristic}: non-finite cnn loss in epoch {}",
                    epoch + 1
                )));
            }
            total += loss * chunk.len() as f64;
            net.backward(&batch, &trace, &y);
            opt.update(&mut net.params);
        }
        let mean = total / docs.len().max(1) as f64;
        debug!("{characteristic} cnn epoch {}: loss {mean:.5}", epoch + 1);
        log.epoch_loss.push(mean);
    }
    info!(
        "{characteristic} cnn: final training loss {:.5}",
        log.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(CnnModel {
        config: config.clone(),
        characteristic: characteristic.to_string(),
        ontology_version: ontology.version,
        scheme,
        classes,
        vocab,
        net,
        log,
    })
}
