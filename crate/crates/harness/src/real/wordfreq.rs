//! Word frequencies: predict a book's tail word counts from its opening section.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PredictionTask;
use crate::error::{Error, Result};

/// English stopword list (318 words).
pub const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z]{2,}").expect("static regex"));
static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]\s+").expect("static regex"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WordfreqConfig {
    pub head_tokens: usize,
    /// Whitespace-separated stopwords; `None` uses [`DEFAULT_STOPWORDS`].
    pub stopwords: Option<String>,
}

impl Default for WordfreqConfig {
    fn default() -> Self {
        Self { head_tokens: 2000, stopwords: None }
    }
}

impl WordfreqConfig {
    fn stopword_set(&self) -> HashSet<&str> {
        self.stopwords.as_deref().unwrap_or(DEFAULT_STOPWORDS).split_whitespace().collect()
    }
}

/// Lowercased alphabetic runs of length >= 2, minus stopwords.
pub fn tokenize(text: &str, stopwords: &HashSet<&str>) -> Vec<String> {
    let lower = text.to_lowercase();
    WORD.find_iter(&lower).map(|m| m.as_str()).filter(|w| !stopwords.contains(w)).map(String::from).collect()
}

/// Non-blank sentences, split after `.`, `!` or `?` followed by whitespace.
pub fn sentences(text: &str) -> Vec<&str> {
    SENTENCE_END.split(text).filter(|s| !s.trim().is_empty()).collect()
}

/// Splits a document after the first sentence at which `head_tokens` tokens are reached.
///
/// The vocabulary covers the whole document, so tail-only words appear with `x = 0`.
/// `n_y` is the ratio of tail to head sentence counts.
pub fn load_wordfreq(text: &str, task_id: &str, cfg: &WordfreqConfig) -> Result<PredictionTask> {
    if cfg.head_tokens == 0 {
        return Err(Error::InvalidArgument("head_tokens must be positive".into()));
    }
    let stop = cfg.stopword_set();
    let sents: Vec<Vec<String>> = sentences(text).into_iter().map(|s| tokenize(s, &stop)).collect();
    let total: usize = sents.iter().map(Vec::len).sum();
    if total <= cfg.head_tokens {
        return Err(Error::TooShort { task_id: task_id.into(), tokens: total, needed: cfg.head_tokens });
    }
    let mut seen = 0;
    let mut head_sents = 0;
    while seen < cfg.head_tokens {
        seen += sents[head_sents].len();
        head_sents += 1;
    }
    let tail_sents = sents.len() - head_sents;
    if tail_sents == 0 || seen == total {
        return Err(Error::TooShort { task_id: task_id.into(), tokens: total, needed: cfg.head_tokens });
    }
    let mut pairs: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (i, s) in sents.into_iter().enumerate() {
        for w in s {
            let e = pairs.entry(w).or_default();
            if i < head_sents {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    PredictionTask::from_map(task_id, pairs, tail_sents as f64 / head_sents as f64)
}
