//! Synthetic echocardiogram-style reports with gold span annotations.
//!
//! Phrases come from a template file (see `data/templates.toml`). Numeric
//! slots keep measurements inside the band of the drawn severity, e.g. a mild
//! LVEF statement carries a value in 41..=50 and a severe pericardial
//! effusion a diameter of at least 20 mm.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{AnnotatedDocument, SpanAnnotation};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, SeverityLabel};

const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");
const TABLE2_PROFILE: &str = include_str!("../../data/profile_table2.toml");

const PREFIX_P: f64 = 0.35;
const SUFFIX_P: f64 = 0.2;
const REPEAT_P: f64 = 0.1;
const NEWLINE_P: f64 = 0.3;
const MAX_DISTRACTORS: usize = 2;

#[derive(Debug, Clone, Deserialize)]
struct ContextFile {
    prefixes: Vec<String>,
    suffixes: Vec<String>,
    conclusion: String,
    distractors: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct PhraseEntry {
    characteristic: String,
    label: String,
    templates: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateFile {
    slots: BTreeMap<String, Vec<String>>,
    ranges: BTreeMap<String, [i64; 2]>,
    context: ContextFile,
    phrase: Vec<PhraseEntry>,
}

#[derive(Debug, Clone)]
pub struct Templates {
    slots: BTreeMap<String, Vec<String>>,
    ranges: BTreeMap<String, (i64, i64)>,
    context: ContextFile,
    phrases: BTreeMap<(String, SeverityLabel), Vec<String>>,
}

impl Templates {
    pub fn bundled() -> Templates {
        Templates::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn parse(source: &str) -> Result<Templates> {
        let file: TemplateFile =
            toml::from_str(source).map_err(|e| Error::parse("templates", e))?;
        let mut phrases: BTreeMap<(String, SeverityLabel), Vec<String>> = BTreeMap::new();
        for p in file.phrase {
            let label: SeverityLabel = p.label.parse()?;
            if p.templates.is_empty() {
                return Err(Error::parse(
                    "templates",
                    format!("{} / {label}: empty template list", p.characteristic),
                ));
            }
            phrases
                .entry((p.characteristic, label))
                .or_default()
                .extend(p.templates);
        }
        let ranges = file
            .ranges
            .into_iter()
            .map(|(k, [lo, hi])| {
                if lo > hi {
                    Err(Error::parse("templates", format!("range `{k}` is empty")))
                } else {
                    Ok((k, (lo, hi)))
                }
            })
            .collect::<Result<_>>()?;
        let t = Templates {
            slots: file.slots,
            ranges,
            context: file.context,
            phrases,
        };
        // Every slot reference must resolve.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for template in t
            .phrases
            .values()
            .flatten()
            .chain(&t.context.distractors)
            .chain(&t.context.prefixes)
            .chain(&t.context.suffixes)
        {
            t.expand(template, &mut rng)?;
        }
        Ok(t)
    }

    pub fn phrases_for(&self, characteristic: &str, label: SeverityLabel) -> Option<&[String]> {
        self.phrases
            .get(&(characteristic.to_string(), label))
            .map(Vec::as_slice)
    }

    /// Every (characteristic, label) pair with at least one template.
    pub fn covered(&self) -> impl Iterator<Item = (&str, SeverityLabel)> {
        self.phrases.keys().map(|(c, l)| (c.as_str(), *l))
    }

    pub fn slot(&self, name: &str) -> Option<&[String]> {
        self.slots.get(name).map(Vec::as_slice)
    }

    pub fn range(&self, name: &str) -> Option<(i64, i64)> {
        self.ranges.get(name).copied()
    }

    fn expand<R: Rng>(&self, template: &str, rng: &mut R) -> Result<String> {
        let mut out = String::with_capacity(template.len() + 16);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..].find('}').ok_or_else(|| {
                Error::parse("templates", format!("unclosed slot in `{template}`"))
            })? + open;
            let name = &rest[open + 1..close];
            if let Some(values) = self.slots.get(name) {
                let v = values
                    .choose(rng)
                    .ok_or_else(|| Error::parse("templates", format!("slot `{name}` is empty")))?;
                out.push_str(v);
            } else if let Some(&(lo, hi)) = self.ranges.get(name) {
                out.push_str(&rng.random_range(lo..=hi).to_string());
            } else {
                return Err(Error::parse(
                    "templates",
                    format!("unknown slot `{name}` in `{template}`"),
                ));
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Label weights per characteristic. Characteristics absent from a profile
/// are never mentioned.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub weights: BTreeMap<String, Vec<(SeverityLabel, f64)>>,
}

impl Profile {
    /// Marginals of the reference corpus document label counts.
    pub fn table2() -> Profile {
        Profile::parse(TABLE2_PROFILE).expect("bundled profile is valid")
    }

    /// Equal weight for every admissible label, `NoLabel` included.
    pub fn uniform(ontology: &Ontology) -> Profile {
        Profile {
            weights: ontology
                .characteristics
                .iter()
                .map(|c| (c.id.clone(), c.labels.iter().map(|&l| (l, 1.0)).collect()))
                .collect(),
        }
    }

    /// TOML with one table per characteristic mapping label names to weights.
    pub fn parse(source: &str) -> Result<Profile> {
        let raw: BTreeMap<String, BTreeMap<String, f64>> =
            toml::from_str(source).map_err(|e| Error::parse("profile", e))?;
        let mut weights = BTreeMap::new();
        for (c, labels) in raw {
            let mut row = Vec::with_capacity(labels.len());
            for (name, w) in labels {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::parse(
                        "profile",
                        format!("{c}.{name}: invalid weight {w}"),
                    ));
                }
                row.push((name.parse::<SeverityLabel>()?, w));
            }
            row.sort_by_key(|(l, _)| SeverityLabel::ALL.iter().position(|x| x == l));
            weights.insert(c, row);
        }
        Ok(Profile { weights })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<AnnotatedDocument>,
    /// Document labels drawn by the generator, per characteristic.
    pub emitted: BTreeMap<String, BTreeMap<SeverityLabel, usize>>,
}

struct Sentence {
    text: String,
    /// Span char range inside `text`, with its characteristic and label.
    span: Option<(usize, usize, String, SeverityLabel)>,
}

fn capitalize_first(s: &mut String) {
    if let Some(c) = s.chars().next() {
        if c.is_lowercase() {
            let upper: String = c.to_uppercase().collect();
            s.replace_range(..c.len_utf8(), &upper);
        }
    }
}

pub fn generate_synthetic(
    ontology: &Ontology,
    templates: &Templates,
    n_docs: usize,
    seed: u64,
    profile: &Profile,
) -> Result<SyntheticCorpus> {
    if n_docs == 0 {
        return Err(Error::invalid("n_docs must be positive"));
    }

    let mut samplers = Vec::new();
    for (c, row) in &profile.weights {
        for &(label, w) in row {
            ontology.check_label(c, label)?;
            if w > 0.0
                && label != SeverityLabel::NoLabel
                && templates.phrases_for(c, label).is_none()
            {
                return Err(Error::invalid(format!(
                    "profile gives weight to {c}/{label} but no template exists"
                )));
            }
        }
        let dist = WeightedIndex::new(row.iter().map(|(_, w)| *w))
            .map_err(|e| Error::invalid(format!("profile for `{c}`: {e}")))?;
        samplers.push((
            c.as_str(),
            row.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
            dist,
        ));
    }
    // Keep ontology order so documents do not depend on profile key order.
    samplers.sort_by_key(|(c, _, _)| ontology.index_of(c));
    let can_mention = profile
        .weights
        .values()
        .flatten()
        .any(|&(l, w)| l != SeverityLabel::NoLabel && w > 0.0);
    if !can_mention {
        return Err(Error::invalid("profile never emits a finding"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emitted: BTreeMap<String, BTreeMap<SeverityLabel, usize>> = BTreeMap::new();
    let mut docs = Vec::with_capacity(n_docs);
    let ctx = &templates.context;

    for i in 0..n_docs {
        let drawn: Vec<(&str, SeverityLabel)> = loop {
            let d: Vec<(&str, SeverityLabel)> = samplers
                .iter()
                .map(|(c, labels, dist)| (*c, labels[dist.sample(&mut rng)]))
                .collect();
            if d.iter().any(|(_, l)| *l != SeverityLabel::NoLabel) {
                break d;
            }
        };

        let mut body = Vec::new();
        let mut conclusions = Vec::new();
        for &(c, label) in &drawn {
            *emitted
                .entry(c.to_string())
                .or_default()
                .entry(label)
                .or_default() += 1;
            if label == SeverityLabel::NoLabel {
                continue;
            }
            let phrases = templates.phrases_for(c, label).expect("validated above");
            body.push(finding_sentence(templates, phrases, c, label, &mut rng)?);
            if rng.random_bool(REPEAT_P) {
                let span = templates.expand(phrases.choose(&mut rng).unwrap(), &mut rng)?;
                let lead = format!("{} ", ctx.conclusion);
                let start = lead.chars().count();
                let end = start + span.chars().count();
                conclusions.push(Sentence {
                    text: format!("{lead}{span}."),
                    span: Some((start, end, c.to_string(), label)),
                });
            }
        }
        let n_distractors = if ctx.distractors.is_empty() {
            0
        } else {
            rng.random_range(0..=MAX_DISTRACTORS)
        };
        for _ in 0..n_distractors {
            let mut text = templates.expand(ctx.distractors.choose(&mut rng).unwrap(), &mut rng)?;
            capitalize_first(&mut text);
            text.push('.');
            body.push(Sentence { text, span: None });
        }
        body.shuffle(&mut rng);
        body.extend(conclusions);

        let mut text = String::new();
        let mut offset = 0;
        let mut spans = Vec::new();
        for (k, s) in body.into_iter().enumerate() {
            if k > 0 {
                text.push(if rng.random_bool(NEWLINE_P) {
                    '\n'
                } else {
                    ' '
                });
                offset += 1;
            }
            if let Some((start, end, c, label)) = s.span {
                spans.push(SpanAnnotation {
                    start: offset + start,
                    end: offset + end,
                    characteristic: c,
                    label,
                });
            }
            offset += s.text.chars().count();
            text.push_str(&s.text);
        }
        docs.push(AnnotatedDocument::new(
            format!("synth-{seed}-{i:05}"),
            text,
            spans,
            ontology,
        )?);
    }

    Ok(SyntheticCorpus { docs, emitted })
}

fn finding_sentence(
    templates: &Templates,
    phrases: &[String],
    characteristic: &str,
    label: SeverityLabel,
    rng: &mut ChaCha8Rng,
) -> Result<Sentence> {
    let ctx = &templates.context;
    let span = templates.expand(phrases.choose(rng).unwrap(), rng)?;
    let mut text = String::new();
    if !ctx.prefixes.is_empty() && rng.random_bool(PREFIX_P) {
        text.push_str(&templates.expand(ctx.prefixes.choose(rng).unwrap(), rng)?);
        text.push(' ');
    }
    let start = text.chars().count();
    text.push_str(&span);
    let end = start + span.chars().count();
    if !ctx.suffixes.is_empty() && rng.random_bool(SUFFIX_P) {
        text.push(' ');
        text.push_str(&templates.expand(ctx.suffixes.choose(rng).unwrap(), rng)?);
    }
    text.push('.');
    capitalize_first(&mut text);
    Ok(Sentence {
        text,
        span: Some((start, end, characteristic.to_string(), label)),
    })
}
