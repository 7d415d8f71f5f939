use std::collections::HashMap;

use rayon::prelude::*;

use super::TokenizedPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Whitespace,
    Bpe,
}

/// Exact token counts over one side of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub side: Side,
    pub granularity: Granularity,
    counts: HashMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_tokens<I, S>(side: Side, granularity: Granularity, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0;
        for t in tokens {
            let t = t.as_ref();
            if t.is_empty() {
                continue;
            }
            *counts.entry(t.to_owned()).or_insert(0) += 1;
            total += 1;
        }
        Self {
            side,
            granularity,
            counts,
            total,
        }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Tokens by descending count, ties by token.
    pub fn ranked(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Natural log of the corpus count; unseen tokens count as 1.
    pub fn log_freq(&self, token: &str) -> f64 {
        (self.count(token).max(1) as f64).ln()
    }

    fn merge(mut self, other: Self) -> Self {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self.total += other.total;
        self
    }
}

fn view(pair: &TokenizedPair, side: Side, granularity: Granularity) -> &[String] {
    match (side, granularity) {
        (Side::Source, Granularity::Whitespace) => &pair.src_ws,
        (Side::Source, Granularity::Bpe) => &pair.src_bpe,
        (Side::Target, Granularity::Whitespace) => &pair.trg_ws,
        (Side::Target, Granularity::Bpe) => &pair.trg_bpe,
    }
}

/// Counts one side at one granularity. Sharded across threads; the merge
/// is a sum, so the result does not depend on the sharding.
pub fn build_frequency_table(
    pairs: &[TokenizedPair],
    side: Side,
    granularity: Granularity,
) -> FrequencyTable {
    pairs
        .par_chunks(4096)
        .map(|chunk| {
            FrequencyTable::from_tokens(
                side,
                granularity,
                chunk.iter().flat_map(|p| view(p, side, granularity)),
            )
        })
        .reduce(
            || FrequencyTable::from_tokens(side, granularity, std::iter::empty::<&str>()),
            FrequencyTable::merge,
        )
}
