//! Latent Dirichlet allocation fitted with collapsed Gibbs sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub n_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub train_sweeps: usize,
    pub infer_sweeps: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: 20,
            alpha: 0.1,
            beta: 0.01,
            train_sweeps: 200,
            infer_sweeps: 50,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub config: LdaConfig,
    pub vocab_size: usize,
    /// `n_topics × vocab_size` assignment counts.
    pub topic_word: Vec<u32>,
    pub topic_total: Vec<u32>,
}

/// Sampler state over a training corpus of word-id documents.
pub(crate) struct Sampler<'a> {
    cfg: &'a LdaConfig,
    docs: &'a [Vec<u32>],
    v: usize,
    z: Vec<Vec<u16>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return k;
        }
    }
    probs.len() - 1
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(docs: &'a [Vec<u32>], vocab_size: usize, cfg: &'a LdaConfig) -> Self {
        let k = cfg.n_topics;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut topic_word = vec![0u32; k * vocab_size];
        let mut topic_total = vec![0u32; k];
        let mut doc_topic = Vec::with_capacity(docs.len());
        let mut z = Vec::with_capacity(docs.len());
        for d in docs {
            let mut dt = vec![0u32; k];
            let zd: Vec<u16> = d
                .iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    dt[t] += 1;
                    topic_word[t * vocab_size + w as usize] += 1;
                    topic_total[t] += 1;
                    t as u16
                })
                .collect();
            doc_topic.push(dt);
            z.push(zd);
        }
        Sampler {
            cfg,
            docs,
            v: vocab_size,
            z,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            probs: vec![0.0; k],
        }
    }

    pub(crate) fn sweep(&mut self) {
        let k = self.cfg.n_topics;
        let vb = self.v as f64 * self.cfg.beta;
        for (di, d) in self.docs.iter().enumerate() {
            for (i, &w) in d.iter().enumerate() {
                let w = w as usize;
                let old = self.z[di][i] as usize;
                self.doc_topic[di][old] -= 1;
                self.topic_word[old * self.v + w] -= 1;
                self.topic_total[old] -= 1;
                for t in 0..k {
                    self.probs[t] = (self.doc_topic[di][t] as f64 + self.cfg.alpha)
                        * (self.topic_word[t * self.v + w] as f64 + self.cfg.beta)
                        / (self.topic_total[t] as f64 + vb);
                }
                let new = draw(&mut self.rng, &self.probs);
                self.z[di][i] = new as u16;
                self.doc_topic[di][new] += 1;
                self.topic_word[new * self.v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    #[cfg(test)]
    fn assigned_tokens(&self) -> u64 {
        self.topic_word.iter().map(|&c| c as u64).sum()
    }

    fn finish(self) -> LdaModel {
        LdaModel {
            config: self.cfg.clone(),
            vocab_size: self.v,
            topic_word: self.topic_word,
            topic_total: self.topic_total,
        }
    }
}

pub fn fit_lda(docs: &[Vec<u32>], vocab_size: usize, cfg: &LdaConfig) -> Result<LdaModel> {
    if cfg.n_topics == 0 || cfg.n_topics > u16::MAX as usize {
        return Err(Error::invalid("LDA needs between 1 and 65535 topics"));
    }
    if !(cfg.alpha > 0.0 && cfg.beta > 0.0) {
        return Err(Error::invalid("LDA priors must be positive"));
    }
    if docs.iter().all(Vec::is_empty) || vocab_size == 0 {
        return Err(Error::invalid("LDA corpus is empty"));
    }
    if docs.iter().flatten().any(|&w| w as usize >= vocab_size) {
        return Err(Error::invalid("LDA word id outside the vocabulary"));
    }
    let mut s = Sampler::new(docs, vocab_size, cfg);
    for _ in 0..cfg.train_sweeps {
        s.sweep();
    }
    Ok(s.finish())
}

impl LdaModel {
    /// Smoothed topic-word probability.
    pub fn phi(&self, topic: usize, word: usize) -> f64 {
        (self.topic_word[topic * self.vocab_size + word] as f64 + self.config.beta)
            / (self.topic_total[topic] as f64 + self.vocab_size as f64 * self.config.beta)
    }

    /// Topic proportions of a document, sampled with the topic-word counts
    /// held fixed. The sampler seed mixes the model seed with the word ids,
    /// so the result depends only on the document.
    pub fn infer(&self, doc: &[u32]) -> Vec<f64> {
        let k = self.config.n_topics;
        let words: Vec<usize> = doc
            .iter()
            .map(|&w| w as usize)
            .filter(|&w| w < self.vocab_size)
            .collect();
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for &w in &words {
            hash = fnv1a(hash, &(w as u32).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ hash);
        let phi: Vec<Vec<f64>> = words
            .iter()
            .map(|&w| (0..k).map(|t| self.phi(t, w)).collect())
            .collect();
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = words
            .iter()
            .map(|_| {
                let t = rng.random_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let mut probs = vec![0.0; k];
        for _ in 0..self.config.infer_sweeps {
            for (i, p) in phi.iter().enumerate() {
                counts[z[i]] -= 1;
                for t in 0..k {
                    probs[t] = (counts[t] as f64 + self.config.alpha) * p[t];
                }
                z[i] = draw(&mut rng, &probs);
                counts[z[i]] += 1;
            }
        }
        let denom = words.len() as f64 + k as f64 * self.config.alpha;
        counts
            .iter()
            .map(|&c| (c as f64 + self.config.alpha) / denom)
            .collect()
    }
}
