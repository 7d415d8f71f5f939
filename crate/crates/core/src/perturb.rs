//! Token-insertion perturbations and the hallucination-tendency ratio.
//!
//! A source is perturbed by inserting one vocabulary token at one of a few
//! evenly spread positions. A perturbed translation hallucinates when its
//! sentence BLEU drops below 1.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ExampleId;
use crate::corpus::FrequencyTable;
use crate::corpus::text::is_punct_char;
use crate::error::{Error, Result};
use crate::hashing::ContentHasher;
use crate::metrics::sentence_bleu;

pub const HALLUCINATION_BLEU: f64 = 1.0;
pub const DEFAULT_SLICE_SIZES: (usize, usize, usize) = (100, 100, 100);
pub const DEFAULT_POSITIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertionVocab {
    pub tokens: Vec<String>,
    /// The table had fewer distinct tokens than the requested slices.
    pub shrunk: bool,
}

/// High-, mid- and low-frequency slices of the ranked table, followed by
/// every single-character punctuation token it contains. Small tables
/// shrink the slices in proportion.
pub fn build_insertion_vocab(table: &FrequencyTable, sizes: (usize, usize, usize)) -> InsertionVocab {
    let ranked = table.ranked();
    let d = ranked.len();
    let requested = sizes.0 + sizes.1 + sizes.2;
    let shrunk = d < requested;
    let (top, mid, low) = if shrunk {
        let scale = |s: usize| s * d / requested.max(1);
        (scale(sizes.0), scale(sizes.1), scale(sizes.2))
    } else {
        sizes
    };
    let mid_start = (d / 2).saturating_sub(mid / 2).min(d - mid.min(d));
    let slices = [0..top.min(d), mid_start..(mid_start + mid).min(d), d.saturating_sub(low)..d];
    let mut seen = std::collections::HashSet::new();
    let mut tokens = Vec::new();
    let punct = ranked.iter().filter(|(t, _)| {
        let mut cs = t.chars();
        matches!((cs.next(), cs.next()), (Some(c), None) if is_punct_char(c))
    });
    for (t, _) in slices.into_iter().flat_map(|r| ranked[r].iter()).chain(punct) {
        if seen.insert(*t) {
            tokens.push((*t).to_owned());
        }
    }
    InsertionVocab { tokens, shrunk }
}

/// `{floor(k * len / (n - 1))}` for `k = 0..n`, deduplicated.
pub fn insertion_positions(len: usize, n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![0];
    }
    let mut p: Vec<usize> = (0..n).map(|k| k * len / (n - 1)).collect();
    p.dedup();
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub base_id: ExampleId,
    pub insertions: Vec<(String, usize)>,
    pub sources: Vec<Vec<String>>,
}

/// One perturbed copy of each source per (token, position).
pub fn perturb_sources(
    sources: &[(ExampleId, Vec<String>)],
    vocab: &InsertionVocab,
    n_positions: usize,
) -> Result<Vec<PerturbationSet>> {
    if let Some((id, _)) = sources.iter().find(|(_, s)| s.is_empty()) {
        return Err(Error::InvalidArgument(format!("source {id} is empty")));
    }
    Ok(sources
        .par_iter()
        .map(|(id, src)| {
            let positions = insertion_positions(src.len(), n_positions);
            let mut insertions = Vec::with_capacity(vocab.tokens.len() * positions.len());
            let mut out = Vec::with_capacity(insertions.capacity());
            for tok in &vocab.tokens {
                for &p in &positions {
                    let mut s = Vec::with_capacity(src.len() + 1);
                    s.extend_from_slice(&src[..p]);
                    s.push(tok.clone());
                    s.extend_from_slice(&src[p..]);
                    insertions.push((tok.clone(), p));
                    out.push(s);
                }
            }
            PerturbationSet {
                base_id: *id,
                insertions,
                sources: out,
            }
        })
        .collect())
}

/// Draws up to `per_group` ids from each group, deterministic given the seed.
pub fn evaluation_pool(groups: &[Vec<ExampleId>], per_group: usize, seed: u64) -> Vec<ExampleId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    for g in groups {
        let mut g = g.clone();
        g.shuffle(&mut rng);
        g.truncate(per_group);
        g.sort_unstable();
        pool.extend(g);
    }
    pool
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub row_id: usize,
    pub base_id: ExampleId,
    pub token: String,
    pub position: usize,
    pub source: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationManifest {
    pub n_positions: usize,
    pub vocab_size: usize,
    /// Covers the vocabulary, the position count and the base sources.
    pub hash: String,
    pub rows: Vec<ManifestRow>,
}

impl PerturbationManifest {
    pub fn build(sources: &[(ExampleId, Vec<String>)], vocab: &InsertionVocab, n_positions: usize) -> Result<Self> {
        let sets = perturb_sources(sources, vocab, n_positions)?;
        let mut h = ContentHasher::new();
        h.field(n_positions.to_string());
        for t in &vocab.tokens {
            h.field(t);
        }
        for (id, s) in sources {
            h.field(id.to_string()).field(s.join(" "));
        }
        let mut rows = Vec::new();
        for set in sets {
            for ((token, position), source) in set.insertions.into_iter().zip(set.sources) {
                rows.push(ManifestRow {
                    row_id: rows.len(),
                    base_id: set.base_id,
                    token,
                    position,
                    source,
                });
            }
        }
        Ok(Self {
            n_positions,
            vocab_size: vocab.tokens.len(),
            hash: h.finish(),
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "#perturb\tn_positions={}\tvocab_size={}\thash={}\nrow_id\tbase_id\ttoken\tposition\ttext\n",
            self.n_positions, self.vocab_size, self.hash
        );
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.row_id, r.base_id, r.token, r.position, r.source.join(" "));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .filter(|(_, l)| l.starts_with("#perturb"))
            .ok_or_else(|| Error::parse(&ctx, 1, 1, "missing #perturb header"))?
            .1;
        let f = crate::cartography::header_fields(header);
        let field = |k: &str| f.get(k).copied().ok_or_else(|| Error::parse(&ctx, 1, 1, format!("missing {k}")));
        let num = |k: &str| -> Result<usize> { field(k)?.parse().map_err(|_| Error::parse(&ctx, 1, 1, format!("bad {k}"))) };
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.starts_with("row_id\t") || line.is_empty() {
                continue;
            }
            let p: Vec<&str> = line.splitn(5, '\t').collect();
            if p.len() != 5 {
                return Err(Error::parse(&ctx, i + 1, 1, "expected 5 fields"));
            }
            let int = |k: usize| -> Result<usize> {
                p[k].parse()
                    .map_err(|_| Error::parse(&ctx, i + 1, k + 1, format!("bad integer {:?}", p[k])))
            };
            let row_id = int(0)?;
            if row_id != rows.len() {
                return Err(Error::parse(&ctx, i + 1, 1, format!("expected row {}", rows.len())));
            }
            rows.push(ManifestRow {
                row_id,
                base_id: int(1)?,
                token: p[2].to_owned(),
                position: int(3)?,
                source: crate::corpus::text::whitespace_tokens(p[4]),
            });
        }
        Ok(Self {
            n_positions: num("n_positions")?,
            vocab_size: num("vocab_size")?,
            hash: field("hash")?.to_owned(),
            rows,
        })
    }
}

/// Reads translations line-aligned to `n_rows` manifest rows. Empty lines
/// are empty translations; lines past the end of the file are missing.
pub fn read_translations(path: &Path, n_rows: usize) -> Result<Vec<Vec<String>>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(n_rows);
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(crate::corpus::text::whitespace_tokens(&line));
    }
    if out.len() < n_rows {
        return Err(Error::MissingTranslations((out.len()..n_rows).collect()));
    }
    if out.len() > n_rows {
        return Err(Error::InvalidArgument(format!(
            "{} has {} lines for {n_rows} manifest rows",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Anything that maps source token sequences to translations, in order.
pub trait Translator: Sync {
    fn translate(&self, sources: &[Vec<String>]) -> Result<Vec<Vec<String>>>;
}

/// Wraps a per-sentence closure.
pub struct FnTranslator<F>(pub F);

impl<F> Translator for FnTranslator<F>
where
    F: Fn(&[String]) -> Vec<String> + Sync,
{
    fn translate(&self, sources: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        Ok(sources.par_iter().map(|s| (self.0)(s)).collect())
    }
}

/// Runs `<command…> --eval <in> --out <out> --seed <shard>` once per shard,
/// at most `jobs` at a time. The input holds `id<TAB>source` lines; the
/// output must hold `id<TAB>translation` lines for every input id.
pub struct ExternalTranslator {
    pub command: Vec<String>,
    pub work_dir: PathBuf,
    pub jobs: usize,
}

impl ExternalTranslator {
    fn run_shard(&self, shard: usize, offset: usize, sources: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("empty translator command".into()))?;
        let input = self.work_dir.join(format!("translate.{shard}.in.tsv"));
        let output = self.work_dir.join(format!("translate.{shard}.out.tsv"));
        let mut w = std::io::BufWriter::new(fs::File::create(&input).map_err(|e| Error::io(&input, e))?);
        for (i, s) in sources.iter().enumerate() {
            writeln!(w, "{}\t{}", offset + i, s.join(" ")).map_err(|e| Error::io(&input, e))?;
        }
        w.flush().map_err(|e| Error::io(&input, e))?;
        drop(w);
        let status = Command::new(program)
            .args(args)
            .arg("--eval")
            .arg(&input)
            .arg("--out")
            .arg(&output)
            .arg("--seed")
            .arg(shard.to_string())
            .status()
            .map_err(|e| Error::InvalidArgument(format!("could not start {program}: {e}")))?;
        if !status.success() {
            return Err(Error::InvalidArgument(format!("translator exited with {status}")));
        }
        let text = fs::read_to_string(&output).map_err(|e| Error::io(&output, e))?;
        let mut out: Vec<Option<Vec<String>>> = vec![None; sources.len()];
        let ctx = output.display().to_string();
        for (ln, line) in text.lines().enumerate() {
            let (id, t) = line.split_once('\t').unwrap_or((line, ""));
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(&ctx, ln + 1, 1, format!("bad row id {id:?}")))?;
            let slot = id
                .checked_sub(offset)
                .and_then(|k| out.get_mut(k))
                .ok_or_else(|| Error::parse(&ctx, ln + 1, 1, format!("row {id} not in this shard")))?;
            *slot = Some(crate::corpus::text::whitespace_tokens(t));
        }
        let missing: Vec<usize> = out
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_none())
            .map(|(k, _)| offset + k)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTranslations(missing));
        }
        Ok(out.into_iter().flatten().collect())
    }
}

impl Translator for ExternalTranslator {
    fn translate(&self, sources: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        let jobs = self.jobs.max(1);
        let chunk = sources.len().div_ceil(jobs).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let parts: Vec<Result<Vec<Vec<String>>>> = pool.install(|| {
            sources
                .par_chunks(chunk)
                .enumerate()
                .map(|(k, c)| self.run_shard(k, k * chunk, c))
                .collect()
        });
        let mut out = Vec::with_capacity(sources.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Unperturbed side of one evaluated source.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseExample {
    pub id: ExampleId,
    pub reference: Vec<String>,
    pub translation: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeOptions {
    /// Minimum BLEU of the unperturbed translation; `None` disables the gate.
    pub gate_bleu: Option<f64>,
    /// Score perturbed outputs against the unperturbed translation instead
    /// of the reference.
    pub against_hypothesis: bool,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            gate_bleu: Some(1.0),
            against_hypothesis: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceVerdict {
    pub base_id: ExampleId,
    pub unperturbed_bleu: f64,
    pub evaluated: bool,
    pub hallucinated: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub base_id: ExampleId,
    pub token: String,
    pub position: usize,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationReport {
    pub sources: Vec<SourceVerdict>,
    pub triggers: Vec<Trigger>,
    pub n_evaluated: usize,
    pub n_flagged: usize,
    /// `n_flagged / n_evaluated`, 0 when nothing was evaluated.
    pub ratio: f64,
}

/// Judges translations of every manifest row. `bases` must cover each
/// base id in the manifest.
pub fn judge_hallucinations(
    manifest: &PerturbationManifest,
    translations: &[Vec<String>],
    bases: &[BaseExample],
    options: JudgeOptions,
) -> Result<HallucinationReport> {
    if translations.len() < manifest.rows.len() {
        return Err(Error::MissingTranslations((translations.len()..manifest.rows.len()).collect()));
    }
    let index: std::collections::HashMap<ExampleId, usize> = bases.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
    let unknown: Vec<ExampleId> = manifest
        .rows
        .iter()
        .map(|r| r.base_id)
        .filter(|id| !index.contains_key(id))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let row_bleu: Vec<f64> = manifest
        .rows
        .par_iter()
        .zip(translations)
        .map(|(r, t)| {
            let b = &bases[index[&r.base_id]];
            let target = if options.against_hypothesis { &b.translation } else { &b.reference };
            sentence_bleu(t, target)
        })
        .collect();

    let mut hallucinated = vec![false; bases.len()];
    let mut present = vec![false; bases.len()];
    let mut triggers = Vec::new();
    for (r, &bleu) in manifest.rows.iter().zip(&row_bleu) {
        let k = index[&r.base_id];
        present[k] = true;
        if bleu < HALLUCINATION_BLEU {
            hallucinated[k] = true;
            triggers.push(Trigger {
                base_id: r.base_id,
                token: r.token.clone(),
                position: r.position,
                bleu,
            });
        }
    }
    let sources: Vec<SourceVerdict> = bases
        .iter()
        .enumerate()
        .filter(|(k, _)| present[*k])
        .map(|(k, b)| {
            let unperturbed_bleu = sentence_bleu(&b.translation, &b.reference);
            let evaluated = options.gate_bleu.is_none_or(|g| unperturbed_bleu >= g);
            SourceVerdict {
                base_id: b.id,
                unperturbed_bleu,
                evaluated,
                hallucinated: hallucinated[k],
                flagged: evaluated && hallucinated[k],
            }
        })
        .collect();
    let n_evaluated = sources.iter().filter(|s| s.evaluated).count();
    let n_flagged = sources.iter().filter(|s| s.flagged).count();
    Ok(HallucinationReport {
        ratio: if n_evaluated == 0 { 0.0 } else { n_flagged as f64 / n_evaluated as f64 },
        sources,
        triggers,
        n_evaluated,
        n_flagged,
    })
}

/// Translates the manifest and the bases with `translator`, then judges.
pub fn run_harness(
    manifest: &PerturbationManifest,
    base_sources: &[(ExampleId, Vec<String>)],
    references: &[Vec<String>],
    translator: &dyn Translator,
    options: JudgeOptions,
) -> Result<HallucinationReport> {
    if base_sources.len() != references.len() {
        return Err(Error::DimensionMismatch {
            expected: base_sources.len(),
            found: references.len(),
        });
    }
    let perturbed: Vec<Vec<String>> = manifest.rows.iter().map(|r| r.source.clone()).collect();
    let translations = translator.translate(&perturbed)?;
    let plain: Vec<Vec<String>> = base_sources.iter().map(|(_, s)| s.clone()).collect();
    let base_translations = translator.translate(&plain)?;
    let bases: Vec<BaseExample> = base_sources
        .iter()
        .zip(references)
        .zip(base_translations)
        .map(|(((id, _), reference), translation)| BaseExample {
            id: *id,
            reference: reference.clone(),
            translation,
        })
        .collect();
    judge_hallucinations(manifest, &translations, &bases, options)
}
