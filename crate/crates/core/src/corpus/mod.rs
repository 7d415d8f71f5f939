//! Parallel corpora: loading, tokenization, BPE, filtering and frequency
//! tables.

mod bpe;
pub(crate) mod filter;
mod freq;
pub mod text;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

pub use bpe::{BpeModel, CONTINUATION, bpe_apply, bpe_learn, join_bpe, read_merges, write_merges};
pub use filter::{Criterion, FilterReport, filter_corpus, write_rejection_report};
pub use freq::{FrequencyTable, Granularity, Side, build_frequency_table};

use crate::ExampleId;
use crate::error::{Error, Result};
use crate::hashing::ContentHasher;

/// One line-aligned example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: ExampleId,
    pub source: String,
    pub target: String,
}

/// Whitespace and BPE views of a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub pair_id: ExampleId,
    pub src_ws: Vec<String>,
    pub trg_ws: Vec<String>,
    pub src_bpe: Vec<String>,
    pub trg_bpe: Vec<String>,
}

impl TokenizedPair {
    pub fn new(pair: &SentencePair, model: &BpeModel) -> Self {
        let src_ws = text::whitespace_tokens(&pair.source);
        let trg_ws = text::whitespace_tokens(&pair.target);
        let src_bpe = bpe_apply(model, &src_ws);
        let trg_bpe = bpe_apply(model, &trg_ws);
        Self {
            pair_id: pair.id,
            src_ws,
            trg_ws,
            src_bpe,
            trg_bpe,
        }
    }

    /// Number of target BPE tokens, the length used by the likelihood.
    pub fn target_len(&self) -> usize {
        self.trg_bpe.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
}

impl Corpus {
    /// Builds a corpus from in-memory line pairs; ids follow input order.
    pub fn from_pairs<S: Into<String>, T: Into<String>>(pairs: impl IntoIterator<Item = (S, T)>) -> Self {
        let pairs = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (s, t))| SentencePair {
                id,
                source: s.into(),
                target: t.into(),
            })
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: ExampleId) -> Option<&SentencePair> {
        self.pairs.get(id).filter(|p| p.id == id)
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for p in &self.pairs {
            h.field(p.id.to_string()).field(&p.source).field(&p.target);
        }
        h.finish()
    }

    pub fn tokenize(&self, model: &BpeModel) -> Vec<TokenizedPair> {
        self.pairs.par_iter().map(|p| TokenizedPair::new(p, model)).collect()
    }

    /// Keeps only the listed ids, in the given order, with their original ids.
    pub fn subset(&self, ids: &[ExampleId]) -> Vec<&SentencePair> {
        ids.iter().filter_map(|&id| self.get(id)).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let mut line = line.map_err(|e| Error::io(path, e))?;
        if line.ends_with('\r') {
            line.pop();
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Reads two line-aligned files into a corpus with ids `0..N`.
pub fn load_parallel(source_file: &Path, target_file: &Path) -> Result<Corpus> {
    let sources = read_lines(source_file)?;
    let targets = read_lines(target_file)?;
    if sources.len() != targets.len() {
        return Err(Error::LineCountMismatch {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let mut pairs = Vec::with_capacity(sources.len());
    for (id, (source, target)) in sources.into_iter().zip(targets).enumerate() {
        if source.trim().is_empty() {
            return Err(Error::EmptyLine {
                path: source_file.to_owned(),
                line: id + 1,
            });
        }
        if target.trim().is_empty() {
            return Err(Error::EmptyLine {
                path: target_file.to_owned(),
                line: id + 1,
            });
        }
        pairs.push(SentencePair { id, source, target });
    }
    Ok(Corpus { pairs })
}
