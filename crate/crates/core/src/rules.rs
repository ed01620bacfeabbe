//! Dictionary lookup baseline: token patterns per (characteristic, label).
//!
//! Every token window is tested against the patterns of each characteristic
//! in file order and takes the label of the first pattern that matches it.
//! Overlapping windows of one characteristic are then resolved greedily:
//! longest window first, ties to the earlier pattern, then the earlier start.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::Serialize;

use crate::corpus::SpanAnnotation;
use crate::error::{Error, Result};
use crate::ontology::{Ontology, SeverityLabel};
use crate::textproc::TokenizedDocument;

const DEMO_RULES: &str = include_str!("../data/demo.rules");

/// Longest token window a pattern may cover.
pub const MAX_WINDOW: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TokenMatcher {
    Literal(String),
    Alternation(Vec<String>),
    Wildcard,
    Optional(Box<TokenMatcher>),
}

impl TokenMatcher {
    fn matches(&self, norm: &str) -> bool {
        match self {
            TokenMatcher::Literal(s) => s == norm,
            TokenMatcher::Alternation(opts) => opts.iter().any(|o| o == norm),
            TokenMatcher::Wildcard => true,
            TokenMatcher::Optional(inner) => inner.matches(norm),
        }
    }

    fn parse(raw: &str) -> std::result::Result<TokenMatcher, String> {
        if let Some(inner) = raw.strip_prefix('?') {
            let inner = TokenMatcher::parse(inner)?;
            if matches!(inner, TokenMatcher::Optional(_)) {
                return Err(format!("nested optional `{raw}`"));
            }
            return Ok(TokenMatcher::Optional(Box::new(inner)));
        }
        if raw == "*" {
            return Ok(TokenMatcher::Wildcard);
        }
        if let Some(body) = raw.strip_prefix('(') {
            let body = body
                .strip_suffix(')')
                .ok_or_else(|| format!("unbalanced alternation `{raw}`"))?;
            let opts: Vec<String> = body.split('|').map(str::to_lowercase).collect();
            if opts.iter().any(String::is_empty) {
                return Err(format!("empty alternative in `{raw}`"));
            }
            return Ok(TokenMatcher::Alternation(opts));
        }
        if raw.is_empty() {
            return Err("empty token".into());
        }
        Ok(TokenMatcher::Literal(raw.to_lowercase()))
    }
}

impl fmt::Display for TokenMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenMatcher::Literal(s) => f.write_str(s),
            TokenMatcher::Alternation(o) => write!(f, "({})", o.join("|")),
            TokenMatcher::Wildcard => f.write_str("*"),
            TokenMatcher::Optional(inner) => write!(f, "?{inner}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RulePattern {
    pub characteristic: String,
    pub label: SeverityLabel,
    pub tokens: Vec<TokenMatcher>,
}

impl RulePattern {
    /// Exclusive end positions of every match beginning at token `start`.
    pub fn match_ends(&self, doc: &TokenizedDocument, start: usize) -> Vec<usize> {
        let mut positions = vec![start];
        for m in &self.tokens {
            let mut next = Vec::with_capacity(positions.len() + 1);
            for &p in &positions {
                if let TokenMatcher::Optional(_) = m {
                    next.push(p);
                }
                if p < doc.len() && m.matches(&doc.tokens[p].norm) {
                    next.push(p + 1);
                }
            }
            next.sort_unstable();
            next.dedup();
            if next.is_empty() {
                return next;
            }
            positions = next;
        }
        positions.retain(|&e| e > start && e - start <= MAX_WINDOW);
        positions
    }

    pub fn matches_window(&self, doc: &TokenizedDocument, range: Range<usize>) -> bool {
        self.match_ends(doc, range.start).contains(&range.end)
    }
}

impl fmt::Display for RulePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let toks: Vec<String> = self.tokens.iter().map(ToString::to_string).collect();
        write!(
            f,
            "{}\t{}\t{}",
            self.characteristic,
            self.label,
            toks.join(" ")
        )
    }
}

/// A matched window and the index of the pattern that labelled it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub pattern: usize,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleSet {
    pub ontology_version: u32,
    pub patterns: Vec<RulePattern>,
}

/// Parses a rule file (`characteristic TAB label TAB pattern` per line).
/// Blank lines and lines starting with `#` are ignored.
pub fn compile_rules(source: &str, ontology: &Ontology) -> Result<RuleSet> {
    let mut patterns = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let ctx = format!("rules: line {}", i + 1);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [characteristic, label, pattern] = fields[..] else {
            return Err(Error::parse(
                ctx,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let characteristic = characteristic.trim();
        ontology.require(characteristic)?;
        let label: SeverityLabel = label
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(&ctx, e))?;
        if label == SeverityLabel::NoLabel {
            return Err(Error::parse(ctx, "rules cannot emit NoLabel"));
        }
        ontology.check_label(characteristic, label)?;
        let tokens = pattern
            .split_whitespace()
            .map(TokenMatcher::parse)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&ctx, e))?;
        if tokens.is_empty() {
            return Err(Error::parse(ctx, "empty pattern"));
        }
        let anchored = tokens
            .iter()
            .filter(|t| !matches!(t, TokenMatcher::Wildcard | TokenMatcher::Optional(_)))
            .count();
        if anchored == 0 {
            return Err(Error::parse(
                ctx,
                "pattern needs at least one required non-wildcard token",
            ));
        }
        let min_len = tokens
            .iter()
            .filter(|t| !matches!(t, TokenMatcher::Optional(_)))
            .count();
        if min_len > MAX_WINDOW {
            return Err(Error::parse(
                ctx,
                format!("pattern is longer than {MAX_WINDOW} tokens"),
            ));
        }
        patterns.push(RulePattern {
            characteristic: characteristic.to_string(),
            label,
            tokens,
        });
    }
    Ok(RuleSet {
        ontology_version: ontology.version,
        patterns,
    })
}

impl RuleSet {
    /// Dictionary covering the bundled synthetic report templates.
    pub fn demo(ontology: &Ontology) -> Result<RuleSet> {
        compile_rules(DEMO_RULES, ontology)
    }

    pub fn demo_source() -> &'static str {
        DEMO_RULES
    }

    pub fn pattern_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.patterns {
            *counts.entry(p.characteristic.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Resolved matches for one characteristic, ordered by start.
    pub fn matches_for(&self, doc: &TokenizedDocument, characteristic: &str) -> Vec<RuleMatch> {
        let mut candidates = Vec::new();
        let mut seen = HashSet::new();
        for start in 0..doc.len() {
            for (idx, p) in self.patterns.iter().enumerate() {
                if p.characteristic != characteristic {
                    continue;
                }
                for end in p.match_ends(doc, start) {
                    if seen.insert((start, end)) {
                        candidates.push(RuleMatch {
                            pattern: idx,
                            range: start..end,
                        });
                    }
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.range
                .len()
                .cmp(&a.range.len())
                .then(a.pattern.cmp(&b.pattern))
                .then(a.range.start.cmp(&b.range.start))
        });
        let mut taken = vec![false; doc.len()];
        let mut kept = Vec::new();
        for m in candidates {
            if taken[m.range.clone()].iter().any(|&t| t) {
                continue;
            }
            taken[m.range.clone()].iter_mut().for_each(|t| *t = true);
            kept.push(m);
        }
        kept.sort_by_key(|m| m.range.start);
        kept
    }

    fn characteristics(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.patterns {
            if !out.contains(&p.characteristic.as_str()) {
                out.push(&p.characteristic);
            }
        }
        out
    }

    pub fn match_document(&self, doc: &TokenizedDocument) -> Vec<SpanAnnotation> {
        let mut spans = Vec::new();
        for c in self.characteristics() {
            for m in self.matches_for(doc, c) {
                let (start, end) = doc.char_span(m.range);
                spans.push(SpanAnnotation {
                    start,
                    end,
                    characteristic: c.to_string(),
                    label: self.patterns[m.pattern].label,
                });
            }
        }
        spans.sort_by(|a, b| {
            (a.start, a.end, &a.characteristic).cmp(&(b.start, b.end, &b.characteristic))
        });
        spans
    }

    /// Label of the first pattern matching exactly `range`, else `NoLabel`.
    pub fn label_window(
        &self,
        doc: &TokenizedDocument,
        characteristic: &str,
        range: Range<usize>,
    ) -> SeverityLabel {
        self.patterns
            .iter()
            .filter(|p| p.characteristic == characteristic)
            .find(|p| p.matches_window(doc, range.clone()))
            .map_or(SeverityLabel::NoLabel, |p| p.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn rules(src: &str) -> RuleSet {
        compile_rules(src, &Ontology::bundled()).unwrap()
    }

    #[test]
    fn direct_hit() {
        let rs = rules("mitral_regurgitation\tNormal\tgeen (mitralisklepinsufficientie|MI)\n");
        let spans = rs.match_document(&tokenize("geen MI ."));
        assert_eq!(
            spans,
            vec![SpanAnnotation {
                start: 0,
                end: 7,
                characteristic: "mitral_regurgitation".into(),
                label: SeverityLabel::Normal
            }]
        );
        assert!(rs.match_document(&tokenize("")).is_empty());
    }

    #[test]
    fn first_pattern_wins_per_window() {
        let rs =
            rules("mitral_regurgitation\tMild\tlichte mi\nmitral_regurgitation\tSevere\t* mi\n");
        let spans = rs.match_document(&tokenize("lichte MI"));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].label, SeverityLabel::Mild);
    }

    #[test]
    fn longest_overlapping_match_wins() {
        let rs = rules(
            "lv_dilatation\tPresent\tgedilateerde lv\nlv_dilatation\tMild\tlicht gedilateerde lv\n",
        );
        let doc = tokenize("Licht gedilateerde LV.");
        let spans = rs.match_document(&doc);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].label, SeverityLabel::Mild);
        assert_eq!((spans[0].start, spans[0].end), (0, 21));
    }

    #[test]
    fn optional_and_wildcard() {
        let rs = rules("aortic_stenosis\tSevere\t?zeer ernstige * aos\n");
        let doc = tokenize("zeer ernstige verkalkte AoS en ernstige x AoS");
        let m = rs.matches_for(&doc, "aortic_stenosis");
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].range, 0..4);
        assert_eq!(m[1].range, 5..8);
    }

    #[test]
    fn compile_errors() {
        let o = Ontology::bundled();
        assert!(matches!(
            compile_rules("wall_motion_abnormalities\tMild\thypokinesie\n", &o),
            Err(Error::InadmissibleLabel { .. })
        ));
        assert!(matches!(
            compile_rules("nope\tMild\tx\n", &o),
            Err(Error::UnknownCharacteristic(_))
        ));
        let err = compile_rules("# c\n\nmitral_regurgitation Mild x\n", &o)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(compile_rules("mitral_regurgitation\tMild\t  \n", &o).is_err());
        assert!(compile_rules("mitral_regurgitation\tMild\t* ?a\n", &o).is_err());
        assert!(compile_rules("mitral_regurgitation\tMild\t(a|)\n", &o).is_err());
    }

    #[test]
    fn demo_rules_cover_every_characteristic() {
        let o = Ontology::bundled();
        let rs = RuleSet::demo(&o).unwrap();
        let counts = rs.pattern_counts();
        for c in o.ids() {
            assert!(counts.get(c).copied().unwrap_or(0) >= 1, "{c}");
        }
    }

    #[test]
    fn emitted_spans_recheck_against_their_pattern() {
        let o = Ontology::bundled();
        let rs = RuleSet::demo(&o).unwrap();
        let synth = crate::corpus::generate_synthetic(
            &o,
            &crate::corpus::Templates::bundled(),
            200,
            9,
            &crate::corpus::Profile::table2(),
        )
        .unwrap();
        for d in &synth.docs {
            let doc = d.tokenize();
            for c in o.ids() {
                let first = rs.matches_for(&doc, c);
                assert_eq!(first, rs.matches_for(&doc, c));
                for m in first {
                    let p = &rs.patterns[m.pattern];
                    assert!(p.matches_window(&doc, m.range.clone()));
                    assert_eq!(rs.label_window(&doc, c, m.range), p.label);
                }
            }
        }
    }
}
