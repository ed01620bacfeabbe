//! Bag-of-words document classifier: TF-IDF and LDA topic proportions feed
//! one boosted tree ensemble per characteristic.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::gbdt::{train_gbdt, GbdtConfig, GbdtModel};
use super::lda::{fit_lda, LdaConfig, LdaModel};
use super::tfidf::{fit_tfidf, SparseVec, Tfidf};
use super::{doc_classes, norm_tokens};
use crate::container::{ModelFile, Tensor};
use crate::corpus::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::ontology::{LabelScheme, Ontology, SeverityLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    pub vocab_size: usize,
    pub lda: LdaConfig,
    pub gbdt: GbdtConfig,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            vocab_size: 5000,
            lda: LdaConfig::default(),
            gbdt: GbdtConfig::default(),
        }
    }
}

impl BowConfig {
    /// Same settings with every seed replaced.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.lda.seed = seed;
        self.gbdt.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowHead {
    pub classes: Vec<SeverityLabel>,
    pub gbdt: GbdtModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowModel {
    pub config: BowConfig,
    pub ontology_version: u32,
    pub scheme: LabelScheme,
    pub tfidf: Tfidf,
    pub lda: LdaModel,
    pub heads: BTreeMap<String, BowHead>,
}

#[derive(Serialize, Deserialize)]
struct BowMeta {
    config: BowConfig,
    scheme: LabelScheme,
    tfidf: Tfidf,
    heads: BTreeMap<String, BowHead>,
}

impl BowModel {
    pub fn n_features(&self) -> usize {
        self.tfidf.vocab.len() + self.lda.config.n_topics
    }

    /// TF-IDF entries followed by the topic proportions.
    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVec {
        features(&self.tfidf, &self.lda, tokens)
    }

    pub fn predict(&self, doc: &AnnotatedDocument) -> BTreeMap<String, SeverityLabel> {
        let x = self.features(&norm_tokens(doc));
        self.heads
            .iter()
            .map(|(c, h)| (c.clone(), h.classes[h.gbdt.predict(&x)]))
            .collect()
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = BowMeta {
            config: self.config.clone(),
            scheme: self.scheme,
            tfidf: self.tfidf.clone(),
            heads: self.heads.clone(),
        };
        let k = self.lda.config.n_topics;
        let tensors = vec![Tensor {
            name: "lda.topic_word".into(),
            shape: vec![k, self.lda.vocab_size],
            data: self.lda.topic_word.iter().map(|&c| c as f32).collect(),
        }];
        ModelFile::new(
            "bow",
            self.ontology_version,
            "",
            serde_json::to_value(meta).expect("bow meta serializes"),
            tensors,
        )
    }

    pub fn from_model_file(file: &ModelFile) -> Result<BowModel> {
        file.expect_kind("bow")?;
        let meta: BowMeta = serde_json::from_value(file.header.meta.clone())
            .map_err(|e| Error::Model(format!("bow header: {e}")))?;
        let v = meta.tfidf.vocab.len();
        if meta.tfidf.idf.len() != v {
            return Err(Error::Model(
                "idf table does not match the vocabulary".into(),
            ));
        }
        let t = file.tensor("lda.topic_word")?;
        let k = meta.config.lda.n_topics;
        if t.shape != [k, v] {
            return Err(Error::Model(format!(
                "lda.topic_word has shape {:?}, expected [{k}, {v}]",
                t.shape
            )));
        }
        if t.data
            .iter()
            .any(|&c| !(c >= 0.0 && c.fract() == 0.0 && c < 16_777_216.0))
        {
            return Err(Error::Model("lda.topic_word must hold counts".into()));
        }
        let topic_word: Vec<u32> = t.data.iter().map(|&c| c as u32).collect();
        let topic_total = topic_word
            .chunks(v.max(1))
            .map(|r| r.iter().sum())
            .collect();
        let lda = LdaModel {
            config: meta.config.lda.clone(),
            vocab_size: v,
            topic_word,
            topic_total,
        };
        for (c, h) in &meta.heads {
            if h.gbdt.n_features != v + k || h.gbdt.boosters.len() != h.classes.len() {
                return Err(Error::Model(format!(
                    "head `{c}` does not match the feature space"
                )));
            }
        }
        Ok(BowModel {
            config: meta.config,
            ontology_version: file.header.ontology_version,
            scheme: meta.scheme,
            tfidf: meta.tfidf,
            lda,
            heads: meta.heads,
        })
    }
}

fn features<S: AsRef<str>>(tfidf: &Tfidf, lda: &LdaModel, tokens: &[S]) -> SparseVec {
    let mut x = tfidf.transform(tokens);
    let v = tfidf.vocab.len() as u32;
    for (t, p) in lda.infer(&tfidf.word_ids(tokens)).into_iter().enumerate() {
        x.indices.push(v + t as u32);
        x.values.push(p);
    }
    x
}

/// Fits the shared TF-IDF and LDA stages once, then one boosted head per
/// listed characteristic. Labels are mapped onto `scheme` first.
pub fn train_bow(
    docs: &[AnnotatedDocument],
    ontology: &Ontology,
    characteristics: &[&str],
    scheme: LabelScheme,
    config: &BowConfig,
) -> Result<BowModel> {
    let tokens: Vec<Vec<String>> = docs.iter().map(norm_tokens).collect();
    let tfidf = fit_tfidf(&tokens, config.vocab_size)?;
    let word_ids: Vec<Vec<u32>> = tokens.iter().map(|t| tfidf.word_ids(t)).collect();
    let lda = fit_lda(&word_ids, tfidf.vocab.len(), &config.lda)?;
    info!(
        "bow: vocabulary {} terms, {} topics",
        tfidf.vocab.len(),
        config.lda.n_topics
    );
    let rows: Vec<SparseVec> = tokens.iter().map(|t| features(&tfidf, &lda, t)).collect();
    let n_features = tfidf.vocab.len() + config.lda.n_topics;

    let mut heads = BTreeMap::new();
    for &c in characteristics {
        let ch = ontology.require(c)?;
        let classes = doc_classes(ch, scheme);
        let labels: Vec<usize> = docs
            .iter()
            .map(|d| {
                let l = d.doc_label_under(c, scheme);
                classes
                    .iter()
                    .position(|&x| x == l)
                    .expect("document label is admissible")
            })
            .collect();
        let gbdt = train_gbdt(&rows, n_features, &labels, classes.len(), &config.gbdt)
            .map_err(|e| Error::Training(format!("`{c}`: {e}")))?;
        info!(
            "bow {c}: training log-loss {:.4} -> {:.4}",
            gbdt.train_loss[0],
            gbdt.train_loss.last().copied().unwrap_or(f64::NAN)
        );
        heads.insert(c.to_string(), BowHead { classes, gbdt });
    }
    Ok(BowModel {
        config: config.clone(),
        ontology_version: ontology.version,
        scheme,
        tfidf,
        lda,
        heads,
    })
}
