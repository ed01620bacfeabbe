use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggesterConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SuggesterConfig {
    fn default() -> Self {
        SuggesterConfig {
            min_len: 1,
            max_len: 25,
        }
    }
}

impl SuggesterConfig {
    pub fn new(min_len: usize, max_len: usize) -> Result<Self> {
        if min_len == 0 || min_len > max_len {
            return Err(Error::invalid(format!(
                "suggester range {min_len}-{max_len} must satisfy 1 <= min <= max"
            )));
        }
        Ok(SuggesterConfig { min_len, max_len })
    }
}

/// Every token range of `n_tokens` with length in `[min_len, max_len]`,
/// ordered by start, then length.
pub fn suggest_spans(n_tokens: usize, cfg: SuggesterConfig) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for start in 0..n_tokens {
        for len in cfg.min_len..=cfg.max_len {
            if start + len > n_tokens {
                break;
            }
            out.push(start..start + len);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let cfg = SuggesterConfig::default();
        assert_eq!(
            suggest_spans(3, cfg),
            vec![0..1, 0..2, 0..3, 1..2, 1..3, 2..3]
        );
        assert!(suggest_spans(0, cfg).is_empty());
        assert_eq!(suggest_spans(30, cfg).len(), (6..=30).sum::<usize>());
        assert!(SuggesterConfig::new(0, 3).is_err());
        assert!(SuggesterConfig::new(4, 3).is_err());
    }
}
