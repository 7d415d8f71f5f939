//! The 28 surface features of a sentence pair.

mod align;
mod edit;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::filter::punct_ratio;
use crate::corpus::text::{is_digit_token, words};
use crate::corpus::{FrequencyTable, Granularity, Side, TokenizedPair, build_frequency_table};
use crate::error::{Error, Result};

pub use align::{
    AlignmentLinks, Ibm1Model, fuzzy_reordering, ibm1_align, ingest_alignments, parse_pharaoh_line, unaligned_ratios,
};
pub use edit::edit_distance;

pub const N_FEATURES: usize = 28;

/// Column order of every feature vector and artifact.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "src_len_ws",
    "src_len_bpe",
    "trg_len_ws",
    "trg_len_bpe",
    "len_ratio_ws",
    "len_ratio_bpe",
    "avg_logfreq_src_ws",
    "avg_logfreq_src_bpe",
    "avg_logfreq_trg_ws",
    "avg_logfreq_trg_bpe",
    "min_logfreq_src_ws",
    "min_logfreq_src_bpe",
    "min_logfreq_trg_ws",
    "min_logfreq_trg_bpe",
    "target_repetitions",
    "segmentation_src",
    "segmentation_trg",
    "digit_ratio",
    "punct_ratio",
    "edit_distance",
    "backtranslation_edit_distance",
    "len_diff_ws",
    "len_diff_bpe",
    "unaligned_src_ratio",
    "unaligned_trg_ratio",
    "fuzzy_reordering_score",
    "token_overlap",
    "word_overlap",
];

/// Index of a feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// Fixed-order feature values with a presence bit per entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    values: [f64; N_FEATURES],
    present: u32,
}

impl Default for FeatureVector {
    fn default() -> Self {
        Self::empty()
    }
}

impl FeatureVector {
    pub const fn empty() -> Self {
        Self {
            values: [0.0; N_FEATURES],
            present: 0,
        }
    }

    pub fn from_options(values: [Option<f64>; N_FEATURES]) -> Self {
        let mut v = Self::empty();
        for (i, x) in values.into_iter().enumerate() {
            v.set(i, x);
        }
        v
    }

    pub fn set(&mut self, i: usize, value: Option<f64>) {
        match value {
            Some(x) => {
                self.values[i] = x;
                self.present |= 1 << i;
            }
            None => {
                self.values[i] = 0.0;
                self.present &= !(1 << i);
            }
        }
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        (self.present & (1 << i) != 0).then_some(self.values[i])
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        self.get(feature_index(name)?)
    }

    pub fn is_complete(&self) -> bool {
        self.present == (1u32 << N_FEATURES) - 1
    }

    pub fn options(&self) -> [Option<f64>; N_FEATURES] {
        std::array::from_fn(|i| self.get(i))
    }

    /// Indices of null entries.
    pub fn missing(&self) -> Vec<usize> {
        (0..N_FEATURES).filter(|&i| self.get(i).is_none()).collect()
    }
}

/// Exact-match counts of whitespace-normalized target strings.
#[derive(Debug, Clone, Default)]
pub struct RepetitionIndex {
    counts: HashMap<String, usize>,
}

impl RepetitionIndex {
    pub fn new(pairs: &[TokenizedPair]) -> Self {
        let mut counts = HashMap::new();
        for p in pairs {
            *counts.entry(p.trg_ws.join(" ")).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn count(&self, trg_ws: &[String]) -> usize {
        self.counts.get(&trg_ws.join(" ")).copied().unwrap_or(0)
    }
}

/// Corpus-level tables shared by all pairs.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub src_ws: FrequencyTable,
    pub src_bpe: FrequencyTable,
    pub trg_ws: FrequencyTable,
    pub trg_bpe: FrequencyTable,
    pub repetitions: RepetitionIndex,
}

impl FeatureContext {
    pub fn build(pairs: &[TokenizedPair]) -> Self {
        Self {
            src_ws: build_frequency_table(pairs, Side::Source, Granularity::Whitespace),
            src_bpe: build_frequency_table(pairs, Side::Source, Granularity::Bpe),
            trg_ws: build_frequency_table(pairs, Side::Target, Granularity::Whitespace),
            trg_bpe: build_frequency_table(pairs, Side::Target, Granularity::Bpe),
            repetitions: RepetitionIndex::new(pairs),
        }
    }
}

fn log_freq_stats(table: &FrequencyTable, tokens: &[String]) -> (Option<f64>, Option<f64>) {
    if tokens.is_empty() {
        return (None, None);
    }
    let logs: Vec<f64> = tokens.iter().map(|t| table.log_freq(t)).collect();
    let avg = logs.iter().sum::<f64>() / logs.len() as f64;
    let min = logs.iter().copied().fold(f64::INFINITY, f64::min);
    (Some(avg), Some(min))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn segmentation(ws: usize, bpe: usize) -> Option<f64> {
    (bpe > 0).then(|| 1.0 - ws as f64 / bpe as f64)
}

/// Fraction of source BPE positions whose token also occurs in the target.
pub fn token_overlap(src_bpe: &[String], trg_bpe: &[String]) -> Option<f64> {
    let trg: HashSet<&str> = trg_bpe.iter().map(String::as_str).collect();
    ratio(src_bpe.iter().filter(|t| trg.contains(t.as_str())).count(), src_bpe.len())
}

/// Same on lowercased whitespace words, punctuation excluded. `None` for an
/// all-punctuation source.
pub fn word_overlap(src_ws: &[String], trg_ws: &[String]) -> Option<f64> {
    let src = words(src_ws);
    let trg: HashSet<String> = words(trg_ws).into_iter().collect();
    ratio(src.iter().filter(|w| trg.contains(*w)).count(), src.len())
}

pub fn overlap_features(pair: &TokenizedPair) -> (Option<f64>, Option<f64>) {
    (
        token_overlap(&pair.src_bpe, &pair.trg_bpe),
        word_overlap(&pair.src_ws, &pair.trg_ws),
    )
}

/// All 28 features of one pair. A missing alignment or backtranslation
/// leaves the features derived from it null.
pub fn extract_features(
    pair: &TokenizedPair,
    ctx: &FeatureContext,
    alignment: Option<&AlignmentLinks>,
    backtranslation: Option<&[String]>,
) -> FeatureVector {
    let (s_ws, s_bpe, t_ws, t_bpe) = (
        pair.src_ws.len(),
        pair.src_bpe.len(),
        pair.trg_ws.len(),
        pair.trg_bpe.len(),
    );
    let (avg_s_ws, min_s_ws) = log_freq_stats(&ctx.src_ws, &pair.src_ws);
    let (avg_s_bpe, min_s_bpe) = log_freq_stats(&ctx.src_bpe, &pair.src_bpe);
    let (avg_t_ws, min_t_ws) = log_freq_stats(&ctx.trg_ws, &pair.trg_ws);
    let (avg_t_bpe, min_t_bpe) = log_freq_stats(&ctx.trg_bpe, &pair.trg_bpe);
    let digits = pair.src_ws.iter().filter(|t| is_digit_token(t)).count();
    let (unaligned_src, unaligned_trg, frs) = match alignment {
        Some(a) => {
            let (us, ut) = unaligned_ratios(a, s_ws, t_ws);
            (Some(us), Some(ut), Some(fuzzy_reordering(a, t_ws)))
        }
        None => (None, None, None),
    };
    let (tok_ov, word_ov) = overlap_features(pair);
    FeatureVector::from_options([
        Some(s_ws as f64),
        Some(s_bpe as f64),
        Some(t_ws as f64),
        Some(t_bpe as f64),
        ratio(s_ws, t_ws),
        ratio(s_bpe, t_bpe),
        avg_s_ws,
        avg_s_bpe,
        avg_t_ws,
        avg_t_bpe,
        min_s_ws,
        min_s_bpe,
        min_t_ws,
        min_t_bpe,
        Some(ctx.repetitions.count(&pair.trg_ws).max(1) as f64),
        segmentation(s_ws, s_bpe),
        segmentation(t_ws, t_bpe),
        ratio(digits, s_ws),
        (s_ws > 0).then(|| punct_ratio(&pair.src_ws)),
        Some(edit_distance(&pair.src_ws, &pair.trg_ws) as f64),
        backtranslation.map(|bt| edit_distance(&pair.src_ws, bt) as f64),
        Some(s_ws as f64 - t_ws as f64),
        Some(s_bpe as f64 - t_bpe as f64),
        unaligned_src,
        unaligned_trg,
        frs,
        tok_ov,
        word_ov,
    ])
}

/// Features for every pair, in input order.
pub fn extract_all(
    pairs: &[TokenizedPair],
    ctx: &FeatureContext,
    alignments: Option<&[Option<AlignmentLinks>]>,
    backtranslations: Option<&[Option<Vec<String>>]>,
) -> Vec<FeatureVector> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let a = alignments.and_then(|v| v.get(i)).and_then(Option::as_ref);
            let b = backtranslations.and_then(|v| v.get(i)).and_then(|o| o.as_deref());
            extract_features(p, ctx, a, b)
        })
        .collect()
}

/// Plain-text backtranslations line-aligned with the corpus. Empty lines
/// and lines past the end of the file are missing.
pub fn read_backtranslations(path: &Path, n_pairs: usize) -> Result<Vec<Option<Vec<String>>>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![None; n_pairs];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if toks.is_empty() {
            continue;
        }
        if i >= n_pairs {
            return Err(Error::parse(&ctx, i + 1, 1, format!("more lines than the {n_pairs} pairs")));
        }
        out[i] = Some(toks);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
