//! Key-term extraction and term-count bookkeeping for interest units.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

/// Term → occurrence count. Terms are lowercase and non-empty, counts ≥ 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermCounts(BTreeMap<String, u32>);

impl TermCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, term: impl Into<String>, count: u32) {
        if count == 0 {
            return;
        }
        *self.0.entry(term.into()).or_insert(0) += count;
    }

    pub fn get(&self, term: &str) -> u32 {
        self.0.get(term).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.values().map(|&c| u64::from(c)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(t, &c)| (t.as_str(), c))
    }

    /// Adds every count of `other` into `self`.
    pub fn absorb(&mut self, other: &TermCounts) {
        for (t, c) in other.iter() {
            self.add(t, c);
        }
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for TermCounts {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut tc = TermCounts::new();
        for (t, c) in iter {
            tc.add(t, c);
        }
        tc
    }
}

/// Pointwise sum of two term-count tables.
pub fn merge_term_counts(a: &TermCounts, b: &TermCounts) -> TermCounts {
    let mut out = a.clone();
    out.absorb(b);
    out
}

/// The `k` most frequent terms, count descending, ties lexicographic ascending.
pub fn top_terms(tc: &TermCounts, k: usize) -> Vec<&str> {
    let mut terms: Vec<(&str, u32)> = tc.iter().collect();
    // BTreeMap iteration is already lexicographic, and the sort is stable.
    terms.sort_by_key(|t| std::cmp::Reverse(t.1));
    terms.into_iter().take(k).map(|(t, _)| t).collect()
}

/// Extracts key terms from a document title.
pub trait KeyTermExtractor: Send + Sync {
    fn extract(&self, title: &str) -> TermCounts;
}

/// Default extractor: tokenize, drop stopwords, count what remains.
#[derive(Clone, Debug, Default)]
pub struct StopwordExtractor {
    stopwords: HashSet<String>,
}

impl StopwordExtractor {
    pub fn new<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopwordExtractor {
            stopwords: stopwords
                .into_iter()
                .map(|s| s.as_ref().trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// Reads a stopword list: one term per line, blank lines ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let lines = reader.lines().collect::<io::Result<Vec<_>>>()?;
        Ok(Self::new(lines))
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }
}

impl KeyTermExtractor for StopwordExtractor {
    fn extract(&self, title: &str) -> TermCounts {
        tokenize(title)
            .into_iter()
            .filter(|t| !self.is_stopword(t))
            .map(|t| (t, 1))
            .collect()
    }
}

/// Extracts with the default extractor and the given stopwords.
pub fn extract_key_terms(title: &str, stopwords: &StopwordExtractor) -> TermCounts {
    stopwords.extract(title)
}
