//! Byte-pair-encoding subword segmentation with `@@` continuation markers.
//!
//! Pieces that are not the last one of their word carry a trailing `@@`.
//! Input tokens that themselves end in `@@` cannot be told apart from
//! continuation pieces on decoding.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTINUATION: &str = "@@";

/// Ordered merge rules; position in the list is the merge priority.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    pub vocab_size_target: usize,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>, vocab_size_target: usize) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            ranks.entry(pair.clone()).or_insert(rank);
        }
        Self {
            merges,
            ranks,
            vocab_size_target,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Segments one whitespace token into symbols, without markers.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        if self.merges.is_empty() {
            return symbols;
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_symbols(&symbols, left, right);
        }
        symbols
    }
}

fn merge_symbols(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Splits whitespace tokens into BPE pieces, marking non-final pieces.
pub fn bpe_apply<S: AsRef<str>>(model: &BpeModel, tokens: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for token in tokens {
        let pieces = model.segment_word(token.as_ref());
        let last = pieces.len().saturating_sub(1);
        for (i, piece) in pieces.into_iter().enumerate() {
            if i < last {
                out.push(piece + CONTINUATION);
            } else {
                out.push(piece);
            }
        }
    }
    out
}

/// Inverse of [`bpe_apply`]: glues continuation pieces back into words.
pub fn join_bpe<S: AsRef<str>>(pieces: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for piece in pieces {
        let piece = piece.as_ref();
        match piece.strip_suffix(CONTINUATION) {
            Some(stem) => current.push_str(stem),
            None => {
                current.push_str(piece);
                words.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[derive(PartialEq, Eq)]
struct HeapEntry {
    count: i64,
    left: String,
    right: String,
    pair: (u32, u32),
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on count, then lexicographically smallest pair first
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Learner {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    pair_counts: HashMap<(u32, u32), i64>,
    pair_words: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<HeapEntry>,
}

impl Learner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_owned());
        self.symbol_ids.insert(s.to_owned(), id);
        id
    }

    fn push(&mut self, pair: (u32, u32)) {
        let count = self.pair_counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            self.heap.push(HeapEntry {
                count,
                left: self.symbols[pair.0 as usize].clone(),
                right: self.symbols[pair.1 as usize].clone(),
                pair,
            });
        }
    }

    fn next_pair(&mut self) -> Option<(u32, u32)> {
        while let Some(entry) = self.heap.pop() {
            let current = self.pair_counts.get(&entry.pair).copied().unwrap_or(0);
            if current != entry.count {
                continue;
            }
            return (current >= 2).then_some(entry.pair);
        }
        None
    }

    fn apply_merge(&mut self, pair: (u32, u32)) {
        let merged = format!("{}{}", self.symbols[pair.0 as usize], self.symbols[pair.1 as usize]);
        let merged_id = self.intern(&merged);
        let mut affected: Vec<usize> = self
            .pair_words
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let mut touched = HashSet::new();
        for w in affected {
            let (old, count) = self.words[w].clone();
            if !old.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in old.windows(2) {
                let key = (p[0], p[1]);
                *self.pair_counts.entry(key).or_insert(0) -= count;
                touched.insert(key);
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    new.push(merged_id);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in new.windows(2) {
                let key = (p[0], p[1]);
                *self.pair_counts.entry(key).or_insert(0) += count;
                self.pair_words.entry(key).or_default().insert(w);
                touched.insert(key);
            }
            self.words[w].0 = new;
        }
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for key in touched {
            self.push(key);
        }
    }
}

/// Learns merges greedily by pair frequency over a token stream (both
/// corpus sides for a joint vocabulary).
///
/// The number of merges is `vocab_size - |characters|`; learning stops
/// early once no pair occurs at least twice.
pub fn bpe_learn<I, S>(tokens: I, vocab_size: usize) -> Result<BpeModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: HashMap<String, i64> = HashMap::new();
    for t in tokens {
        let t = t.as_ref();
        if !t.is_empty() {
            *word_counts.entry(t.to_owned()).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut types: Vec<(String, i64)> = word_counts.into_iter().collect();
    types.sort();

    let mut learner = Learner {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::with_capacity(types.len()),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    let mut chars: Vec<char> = types.iter().flat_map(|(w, _)| w.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    for c in &chars {
        learner.intern(&c.to_string());
    }
    for (w, (word, count)) in types.iter().enumerate() {
        let ids: Vec<u32> = word.chars().map(|c| learner.symbol_ids[&c.to_string()]).collect();
        for p in ids.windows(2) {
            let key = (p[0], p[1]);
            *learner.pair_counts.entry(key).or_insert(0) += count;
            learner.pair_words.entry(key).or_default().insert(w);
        }
        learner.words.push((ids, *count));
    }
    let mut initial: Vec<_> = learner.pair_counts.keys().copied().collect();
    initial.sort_unstable();
    for key in initial {
        learner.push(key);
    }

    let budget = vocab_size.saturating_sub(chars.len());
    let mut merges = Vec::with_capacity(budget);
    while merges.len() < budget {
        let Some(pair) = learner.next_pair() else { break };
        merges.push((
            learner.symbols[pair.0 as usize].clone(),
            learner.symbols[pair.1 as usize].clone(),
        ));
        learner.apply_merge(pair);
    }
    Ok(BpeModel::from_merges(merges, vocab_size))
}

/// Writes one `left right` pair per line in priority order.
pub fn write_merges(model: &BpeModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (l, r) in &model.merges {
        writeln!(w, "{l} {r}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_merges(path: &Path) -> Result<BpeModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut merges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with("#version") {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                merges.push((l.to_owned(), r.to_owned()))
            }
            _ => {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 1,
                    1,
                    "expected `left right`",
                ));
            }
        }
    }
    let n = merges.len();
    Ok(BpeModel::from_merges(merges, n))
}
