//! Word alignments: Pharaoh ingestion, an IBM Model 1 fallback aligner,
//! and the alignment-derived features.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::ExampleId;
use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};

/// Links between whitespace-token positions, `(src_index, trg_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentLinks {
    pub pair_id: ExampleId,
    pub links: BTreeSet<(usize, usize)>,
}

impl AlignmentLinks {
    pub fn new(pair_id: ExampleId, links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            pair_id,
            links: links.into_iter().collect(),
        }
    }

    pub fn to_pharaoh(&self) -> String {
        let parts: Vec<String> = self.links.iter().map(|(s, t)| format!("{s}-{t}")).collect();
        parts.join(" ")
    }
}

/// Parses one Pharaoh line (`i-j` pairs separated by spaces) and checks
/// each index against the sentence lengths.
pub fn parse_pharaoh_line(
    line: &str,
    pair_id: ExampleId,
    src_len: usize,
    trg_len: usize,
    ctx: &str,
    line_no: usize,
) -> Result<AlignmentLinks> {
    let mut links = BTreeSet::new();
    let mut col = 1;
    for raw in line.split(' ') {
        if !raw.is_empty() {
            let parsed = raw
                .split_once('-')
                .and_then(|(s, t)| Some((s.parse::<usize>().ok()?, t.parse::<usize>().ok()?)));
            let (s, t) =
                parsed.ok_or_else(|| Error::parse(ctx, line_no, col, format!("bad alignment token {raw:?}")))?;
            if s >= src_len || t >= trg_len {
                return Err(Error::parse(
                    ctx,
                    line_no,
                    col,
                    format!("link {raw} outside a {src_len}x{trg_len} sentence pair"),
                ));
            }
            links.insert((s, t));
        }
        col += raw.chars().count() + 1;
    }
    Ok(AlignmentLinks { pair_id, links })
}

/// Reads a Pharaoh file line-aligned with `pairs`. Lines past the end of
/// the file leave their pair without alignment (`None`).
pub fn ingest_alignments(path: &Path, pairs: &[TokenizedPair]) -> Result<Vec<Option<AlignmentLinks>>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![None; pairs.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        let Some(p) = pairs.get(i) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(&ctx, i + 1, 1, format!("more alignment lines than the {} pairs", pairs.len())));
        };
        out[i] = Some(parse_pharaoh_line(line, p.pair_id, p.src_ws.len(), p.trg_ws.len(), &ctx, i + 1)?);
    }
    Ok(out)
}

/// Fuzzy reordering score `1 - (C - 1) / (M - 1)` over the source indices
/// visited in target order.
pub fn fuzzy_reordering(links: &AlignmentLinks, trg_len: usize) -> f64 {
    let mut by_target: Vec<Vec<usize>> = vec![Vec::new(); trg_len];
    for &(s, t) in &links.links {
        if t < trg_len {
            by_target[t].push(s);
        }
    }
    let sigma: Vec<usize> = by_target
        .into_iter()
        .flat_map(|mut v| {
            v.sort_unstable();
            v
        })
        .collect();
    let m = sigma.len();
    if m <= 1 {
        return 1.0;
    }
    let chunks = 1 + sigma.windows(2).filter(|w| w[1] != w[0] + 1).count();
    1.0 - (chunks - 1) as f64 / (m - 1) as f64
}

/// Fractions of source and target positions without any link.
pub fn unaligned_ratios(links: &AlignmentLinks, src_len: usize, trg_len: usize) -> (f64, f64) {
    let mut src = vec![false; src_len];
    let mut trg = vec![false; trg_len];
    for &(s, t) in &links.links {
        if s < src_len {
            src[s] = true;
        }
        if t < trg_len {
            trg[t] = true;
        }
    }
    let ratio = |v: &[bool]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|b| !**b).count() as f64 / v.len() as f64
        }
    };
    (ratio(&src), ratio(&trg))
}

const NULL_WORD: u32 = 0;

/// Lexical translation table `t(target | source)` learned by EM.
#[derive(Debug, Clone)]
pub struct Ibm1Model {
    src_vocab: HashMap<String, u32>,
    trg_vocab: HashMap<String, u32>,
    t: HashMap<(u32, u32), f64>,
    uniform: f64,
}

impl Ibm1Model {
    /// `source = None` is the NULL word.
    pub fn prob(&self, source: Option<&str>, target: &str) -> f64 {
        let e = match source {
            None => Some(NULL_WORD),
            Some(w) => self.src_vocab.get(w).copied(),
        };
        match (e, self.trg_vocab.get(target)) {
            (Some(e), Some(&f)) => self.t.get(&(e, f)).copied().unwrap_or(0.0),
            _ => self.uniform,
        }
    }
}

fn intern(vocab: &mut HashMap<String, u32>, w: &str, offset: u32) -> u32 {
    let next = vocab.len() as u32 + offset;
    *vocab.entry(w.to_owned()).or_insert(next)
}

/// Trains IBM Model 1 with a NULL source word from a uniform start and
/// links every target token to its most probable source token. A target
/// aligned to NULL stays unaligned; ties between candidates go to the
/// leftmost real source word.
pub fn ibm1_align(pairs: &[TokenizedPair], iterations: usize) -> Result<(Ibm1Model, Vec<AlignmentLinks>)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("IBM-1 needs at least one EM iteration".into()));
    }
    let mut src_vocab = HashMap::new();
    let mut trg_vocab = HashMap::new();
    let sents: Vec<(Vec<u32>, Vec<u32>)> = pairs
        .iter()
        .map(|p| {
            let mut s = vec![NULL_WORD];
            s.extend(p.src_ws.iter().map(|w| intern(&mut src_vocab, w, 1)));
            let t = p.trg_ws.iter().map(|w| intern(&mut trg_vocab, w, 0)).collect();
            (s, t)
        })
        .collect();
    let uniform = 1.0 / trg_vocab.len().max(1) as f64;
    let mut t: HashMap<(u32, u32), f64> = HashMap::new();
    for (s, tr) in &sents {
        for &f in tr {
            for &e in s {
                t.insert((e, f), uniform);
            }
        }
    }
    for _ in 0..iterations {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(t.len());
        let mut totals: HashMap<u32, f64> = HashMap::new();
        for (s, tr) in &sents {
            for &f in tr {
                let denom: f64 = s.iter().map(|&e| t[&(e, f)]).sum();
                for &e in s {
                    let c = t[&(e, f)] / denom;
                    *counts.entry((e, f)).or_insert(0.0) += c;
                    *totals.entry(e).or_insert(0.0) += c;
                }
            }
        }
        for (key, c) in counts {
            t.insert(key, c / totals[&key.0]);
        }
    }
    let links = pairs
        .iter()
        .zip(&sents)
        .map(|(p, (s, tr))| {
            let mut links = BTreeSet::new();
            for (j, &f) in tr.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (i, &e) in s.iter().enumerate().skip(1) {
                    let v = t[&(e, f)];
                    if best.is_none_or(|(_, b)| v > b * (1.0 + 1e-9)) {
                        best = Some((i - 1, v));
                    }
                }
                let null = t[&(NULL_WORD, f)];
                if let Some((i, v)) = best
                    && null <= v * (1.0 + 1e-9)
                {
                    links.insert((i, j));
                }
            }
            AlignmentLinks {
                pair_id: p.pair_id,
                links,
            }
        })
        .collect();
    Ok((
        Ibm1Model {
            src_vocab,
            trg_vocab,
            t,
            uniform,
        },
        links,
    ))
}
