use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed vocabulary of NORM strings, most frequent (by document frequency)
/// first; ties are broken alphabetically.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { terms, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.terms
    }
}

pub fn is_punctuation(term: &str) -> bool {
    !term.chars().any(char::is_alphanumeric)
}

impl Vocabulary {
    /// Top `max_size` terms by document frequency. Punctuation-only terms are
    /// skipped unless `keep_punctuation` is set.
    pub fn fit<S: AsRef<str>>(
        docs: &[Vec<S>],
        max_size: usize,
        keep_punctuation: bool,
    ) -> Vocabulary {
        let df = document_frequencies(docs);
        let mut ranked: Vec<(&str, usize)> = df
            .iter()
            .filter(|(t, _)| keep_punctuation || !is_punctuation(t))
            .map(|(t, &n)| (t.as_str(), n))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Vocabulary::from(
            ranked
                .into_iter()
                .map(|(t, _)| t.to_string())
                .collect::<Vec<_>>(),
        )
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

fn document_frequencies<S: AsRef<str>>(docs: &[Vec<S>]) -> BTreeMap<String, usize> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for d in docs {
        let mut seen: Vec<&str> = d.iter().map(AsRef::as_ref).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t.to_string()).or_insert(0) += 1;
        }
    }
    df
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.indices
            .binary_search(&index)
            .map_or(0.0, |i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tfidf {
    pub vocab: Vocabulary,
    pub idf: Vec<f64>,
}

/// Fits vocabulary and `idf = ln((1 + N) / (1 + df)) + 1` on tokenized
/// documents (NORM strings).
pub fn fit_tfidf<S: AsRef<str>>(docs: &[Vec<S>], max_vocab: usize) -> Result<Tfidf> {
    if docs.is_empty() {
        return Err(Error::invalid("tf-idf needs at least one document"));
    }
    let vocab = Vocabulary::fit(docs, max_vocab, false);
    if vocab.is_empty() {
        return Err(Error::invalid("tf-idf vocabulary is empty"));
    }
    let df = document_frequencies(docs);
    let n = docs.len() as f64;
    let idf = vocab
        .terms()
        .iter()
        .map(|t| ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0)
        .collect();
    Ok(Tfidf { vocab, idf })
}

impl Tfidf {
    /// Raw counts times idf, L2-normalized; unknown terms are dropped.
    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.vocab.get(t.as_ref()) {
                *counts.entry(i as u32).or_insert(0.0) += 1.0;
            }
        }
        let mut v = SparseVec {
            indices: counts.keys().copied().collect(),
            values: counts
                .iter()
                .map(|(&i, &c)| c * self.idf[i as usize])
                .collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Vocabulary ids of the known tokens, in order.
    pub fn word_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .filter_map(|t| self.vocab.get(t.as_ref()).map(|i| i as u32))
            .collect()
    }
}
