//! Tokenization and the lexical attributes fed to the learned models.
//!
//! Tokens are produced by splitting on whitespace and peeling leading and
//! trailing punctuation off each chunk, one character per token. Internal
//! punctuation (`mitralisklep-insufficientie`, `3/4`, `2,5`) stays attached.
//! All offsets count Unicode scalar values.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub norm: String,
    pub prefix: String,
    pub suffix: String,
    pub shape: String,
}

impl Token {
    fn new(text: String, start: usize) -> Token {
        let len = text.chars().count();
        let norm = text.to_lowercase();
        let prefix: String = text.chars().take(1).collect();
        let suffix: String = text.chars().skip(len.saturating_sub(3)).collect();
        let shape = shape_of(&text);
        Token {
            text,
            start,
            end: start + len,
            norm,
            prefix,
            suffix,
            shape,
        }
    }

    /// Attribute strings in embedding-table order: NORM, PREFIX, SUFFIX, SHAPE.
    pub fn attrs(&self) -> [&str; 4] {
        [&self.norm, &self.prefix, &self.suffix, &self.shape]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<Token>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Character range covered by tokens `range.start..range.end`.
    pub fn char_span(&self, range: std::ops::Range<usize>) -> (usize, usize) {
        (
            self.tokens[range.start].start,
            self.tokens[range.end - 1].end,
        )
    }

    /// Smallest token range covering the character range `[start, end)`,
    /// or `None` when no token intersects it.
    pub fn token_range(&self, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
        let first = self.tokens.iter().position(|t| t.end > start)?;
        let last = self.tokens.iter().rposition(|t| t.start < end)?;
        (first <= last).then(|| first..last + 1)
    }

    /// Rebuilds text from token offsets, filling gaps with single spaces.
    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        let mut pos = 0;
        for t in &self.tokens {
            while pos < t.start {
                out.push(' ');
                pos += 1;
            }
            out.push_str(&t.text);
            pos = t.end;
        }
        out
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

pub fn tokenize(text: &str) -> TokenizedDocument {
    tokenize_with_id("", text)
}

pub fn tokenize_with_id(doc_id: &str, text: &str) -> TokenizedDocument {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk = &chars[chunk_start..i];

        let mut lo = 0;
        while lo < chunk.len() && is_punct(chunk[lo]) {
            lo += 1;
        }
        let mut hi = chunk.len();
        while hi > lo && is_punct(chunk[hi - 1]) {
            hi -= 1;
        }
        for (k, &c) in chunk[..lo].iter().enumerate() {
            tokens.push(Token::new(c.to_string(), chunk_start + k));
        }
        if lo < hi {
            tokens.push(Token::new(chunk[lo..hi].iter().collect(), chunk_start + lo));
        }
        for (k, &c) in chunk[hi.max(lo)..].iter().enumerate() {
            tokens.push(Token::new(c.to_string(), chunk_start + hi.max(lo) + k));
        }
    }
    TokenizedDocument {
        doc_id: doc_id.to_string(),
        tokens,
    }
}

/// `X` for uppercase, `x` for other letters, `d` for digits, anything else kept;
/// runs of more than four identical shape characters are cut to four.
pub fn shape_of(text: &str) -> String {
    let mut out = String::new();
    let mut last = None;
    let mut run = 0;
    for c in text.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_alphabetic() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if Some(s) == last {
            run += 1;
        } else {
            last = Some(s);
            run = 1;
        }
        if run <= 4 {
            out.push(s);
        }
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`, continuing from `state`.
pub fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn fnv1a_str(s: &str) -> u64 {
    fnv1a(FNV_OFFSET, s.as_bytes())
}

/// Row of the `table_index`-th embedding table for an attribute value.
/// The table index salts the hash so tables do not share collisions.
pub fn hash_attr(attr: &str, table_index: usize, n_rows: usize) -> usize {
    assert!(n_rows > 0, "hash_attr: n_rows must be positive");
    let salted = fnv1a(FNV_OFFSET, &(table_index as u64).to_le_bytes());
    (fnv1a(salted, attr.as_bytes()) % n_rows as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(doc: &TokenizedDocument) -> Vec<&str> {
        doc.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn peels_punctuation() {
        assert_eq!(texts(&tokenize("geen MI.")), ["geen", "MI", "."]);
        assert_eq!(texts(&tokenize("LVEF 45%")), ["LVEF", "45", "%"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            texts(&tokenize("(mitralisklep-insufficientie) 3/4, 12mm")),
            ["(", "mitralisklep-insufficientie", ")", "3/4", ",", "12mm"]
        );
        assert_eq!(texts(&tokenize("...")), [".", ".", "."]);
    }

    #[test]
    fn offsets_are_scalar_values() {
        let doc = tokenize("één é.");
        assert_eq!(doc.tokens[0].start, 0);
        assert_eq!(doc.tokens[0].end, 3);
        assert_eq!(doc.tokens[1].text, "é");
        assert_eq!((doc.tokens[2].start, doc.tokens[2].end), (5, 6));
    }

    #[test]
    fn lexical_attributes() {
        let t = &tokenize("Insufficientie").tokens[0];
        assert_eq!(t.norm, "insufficientie");
        assert_eq!(t.prefix, "I");
        assert_eq!(t.suffix, "tie");
        assert_eq!(t.shape, "Xxxxx");
        let t = &tokenize("LV").tokens[0];
        assert_eq!(t.suffix, "LV");
    }

    #[test]
    fn shapes() {
        assert_eq!(shape_of("LVEF"), "XXXX");
        assert_eq!(shape_of("insufficientie"), "xxxx");
        assert_eq!(shape_of("45%"), "dd%");
        assert_eq!(shape_of("12mm"), "ddxx");
        assert_eq!(shape_of("-----"), "----");
    }

    #[test]
    fn token_ranges() {
        let doc = tokenize("geen MI .");
        assert_eq!(doc.token_range(0, 7), Some(0..2));
        assert_eq!(doc.token_range(5, 6), Some(1..2));
        assert_eq!(doc.token_range(4, 5), None);
        assert_eq!(doc.char_span(0..2), (0, 7));
    }

    #[test]
    fn hashing_is_stable() {
        assert_eq!(hash_attr("mi", 0, 5000), hash_attr("mi", 0, 5000));
        // Pinned so that model files stay valid across builds.
        assert_eq!(fnv1a_str(""), FNV_OFFSET);
        assert_eq!(fnv1a_str("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn hashing_spreads_load() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n_rows = 5000;
        let n = 100_000;
        let mut load = vec![0usize; n_rows];
        for _ in 0..n {
            let len = rng.random_range(6..12);
            let s: String = (0..len)
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .collect();
            let row = hash_attr(&s, 2, n_rows);
            assert!(row < n_rows);
            load[row] += 1;
        }
        let mean = n as f64 / n_rows as f64;
        let max = *load.iter().max().unwrap() as f64;
        assert!(max <= 3.0 * mean, "max load {max} vs mean {mean}");
    }

    proptest! {
        #[test]
        fn tokens_tile_the_text(text in "[a-zA-Z0-9 .,%()/\\-é\n]{0,60}") {
            let doc = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut last_end = 0;
            for t in &doc.tokens {
                prop_assert!(t.start >= last_end && t.start < t.end);
                let slice: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&slice, &t.text);
                for c in covered.iter_mut().take(t.end).skip(t.start) {
                    *c = true;
                }
                last_end = t.end;
            }
            for (c, cov) in chars.iter().zip(&covered) {
                prop_assert_eq!(!c.is_whitespace(), *cov);
            }
        }

        #[test]
        fn tokenization_is_idempotent(text in "[a-zA-Z0-9 .,%()/\\-]{0,60}") {
            let doc = tokenize(&text);
            let again = tokenize(&doc.detokenize());
            prop_assert_eq!(&doc.tokens, &again.tokens);
            let spaced: Vec<&str> = doc.tokens.iter().map(|t| t.text.as_str()).collect();
            let rejoined = tokenize(&spaced.join(" "));
            let rejoined: Vec<&str> = rejoined.tokens.iter().map(|t| t.text.as_str()).collect();
            prop_assert_eq!(spaced, rejoined);
        }

        #[test]
        fn shape_alphabet(text in "\\PC{0,20}") {
            let shape = shape_of(&text);
            prop_assert!(shape.chars().count() <= text.chars().count());
            for c in shape.chars() {
                prop_assert!(matches!(c, 'X' | 'x' | 'd') || !c.is_alphanumeric());
            }
        }
    }
}
