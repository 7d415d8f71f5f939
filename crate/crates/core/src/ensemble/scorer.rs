//! Obtaining per-model per-example likelihoods: the built-in toy scorer and
//! the external-command contract.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::scorelog::{ScoreLog, Split, read_seed_log, validate_logs};
use super::MembershipMatrix;
use crate::corpus::{Corpus, SentencePair};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::metrics::geometric_mean_ll;

/// Laplace-smoothed unigram distribution, `(count + 1) / (total + V)`.
#[derive(Debug, Clone, Default)]
pub struct UnigramModel {
    counts: HashMap<String, u64>,
    total: u64,
    vocab_size: usize,
}

impl UnigramModel {
    /// `V` is the number of distinct tokens seen.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0;
        for t in tokens {
            *counts.entry(t.as_ref().to_owned()).or_insert(0) += 1;
            total += 1;
        }
        let vocab_size = counts.len();
        Self {
            counts,
            total,
            vocab_size,
        }
    }

    pub fn with_totals(counts: HashMap<String, u64>, total: u64, vocab_size: usize) -> Self {
        Self {
            counts,
            total,
            vocab_size,
        }
    }

    pub fn prob(&self, token: &str) -> f64 {
        let c = self.counts.get(token).copied().unwrap_or(0);
        (c + 1) as f64 / (self.total as f64 + self.vocab_size as f64)
    }
}

/// Exact `(source, target)` strings of one seed's training half.
pub struct TrainHalf<'a> {
    pairs: HashSet<(&'a str, &'a str)>,
}

impl<'a> TrainHalf<'a> {
    pub fn new(pairs: impl IntoIterator<Item = &'a SentencePair>) -> Self {
        Self {
            pairs: pairs
                .into_iter()
                .map(|p| (p.source.as_str(), p.target.as_str()))
                .collect(),
        }
    }

    pub fn contains(&self, pair: &SentencePair) -> bool {
        self.pairs.contains(&(pair.source.as_str(), pair.target.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScore {
    pub token_probs: Vec<f64>,
    /// Geometric mean after noise, in `(0, 1]`.
    pub geometric_mean: f64,
}

/// Deterministic desk-scale stand-in for a trained NMT model: a mixture of
/// a lookup memoriser and a unigram language model,
/// `p(y_t) = alpha * [pair in train half] + (1 - alpha) * p_uni(y_t)`.
#[derive(Debug, Clone)]
pub struct ToyScorer {
    pub alpha: f64,
    pub noise_sigma: f64,
    pub unigram: UnigramModel,
}

impl ToyScorer {
    pub fn new(alpha: f64, noise_sigma: f64, unigram: UnigramModel) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(Self {
            alpha,
            noise_sigma,
            unigram,
        })
    }

    pub fn token_probs<S: AsRef<str>>(&self, memorised: bool, target: &[S]) -> Vec<f64> {
        let hit = if memorised { self.alpha } else { 0.0 };
        target
            .iter()
            .map(|t| hit + (1.0 - self.alpha) * self.unigram.prob(t.as_ref()))
            .collect()
    }

    /// Scores one pair for one model; log-normal noise on the geometric
    /// mean is seeded by `(seed, example id)`.
    pub fn score<S: AsRef<str>>(
        &self,
        train_half: &TrainHalf<'_>,
        pair: &SentencePair,
        target_tokens: &[S],
        seed: u32,
    ) -> ToyScore {
        let token_probs = self.token_probs(train_half.contains(pair), target_tokens);
        let (gm, _) = geometric_mean_ll(&token_probs);
        let geometric_mean = if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("toy-noise", &[seed as u64, pair.id as u64]));
            let z: f64 = StandardNormal.sample(&mut rng);
            (gm * (self.noise_sigma * z).exp()).clamp(f64::MIN_POSITIVE, 1.0)
        } else {
            gm
        };
        ToyScore {
            token_probs,
            geometric_mean,
        }
    }
}

/// Where per-model scores come from.
pub enum ScorerBackend {
    Builtin(ToyScorer),
    /// `<program> [args...] --train <file> --eval <file> --out <file> --seed <k>`,
    /// at most `jobs` invocations at once.
    External {
        command: Vec<String>,
        work_dir: PathBuf,
        jobs: usize,
    },
}

/// Scores every (seed, example) cell. `target_tokens[i]` is the BPE view of
/// example `i`'s target, used by the built-in scorer.
pub fn run_scorer(
    matrix: &MembershipMatrix,
    corpus: &Corpus,
    target_tokens: &[Vec<String>],
    backend: &ScorerBackend,
) -> Result<Vec<ScoreLog>> {
    if corpus.len() != matrix.n_examples() {
        return Err(Error::DimensionMismatch {
            expected: matrix.n_examples(),
            found: corpus.len(),
        });
    }
    let logs = match backend {
        ScorerBackend::Builtin(toy) => run_builtin(matrix, corpus, target_tokens, toy)?,
        ScorerBackend::External {
            command,
            work_dir,
            jobs,
        } => run_external(matrix, corpus, command, work_dir, *jobs)?,
    };
    validate_logs(matrix, logs)
}

fn run_builtin(
    matrix: &MembershipMatrix,
    corpus: &Corpus,
    target_tokens: &[Vec<String>],
    toy: &ToyScorer,
) -> Result<Vec<ScoreLog>> {
    if target_tokens.len() != corpus.len() {
        return Err(Error::DimensionMismatch {
            expected: corpus.len(),
            found: target_tokens.len(),
        });
    }
    let per_seed: Vec<Vec<ScoreLog>> = (0..matrix.n_seeds())
        .into_par_iter()
        .map(|k| {
            let half = TrainHalf::new(corpus.pairs.iter().filter(|p| matrix.in_train(k, p.id)));
            corpus
                .pairs
                .iter()
                .map(|p| {
                    let score = toy.score(&half, p, &target_tokens[p.id], k as u32);
                    let lp = score.geometric_mean.ln();
                    ScoreLog {
                        seed: k as u32,
                        example_id: p.id,
                        split: Split::from_membership(matrix.in_train(k, p.id)),
                        mean_token_logprob: lp,
                        target_len: target_tokens[p.id].len().max(1),
                        hyp_mean_token_logprob: Some(lp),
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_seed.into_iter().flatten().collect())
}

fn write_pairs<'a>(path: &Path, pairs: impl Iterator<Item = &'a SentencePair>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.id, p.source, p.target).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn run_external(
    matrix: &MembershipMatrix,
    corpus: &Corpus,
    command: &[String],
    work_dir: &Path,
    jobs: usize,
) -> Result<Vec<ScoreLog>> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty scorer command".into()))?;
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let eval_path = work_dir.join("eval.tsv");
    write_pairs(&eval_path, corpus.pairs.iter())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let per_seed: Vec<Result<Vec<ScoreLog>>> = pool.install(|| {
        (0..matrix.n_seeds())
            .into_par_iter()
            .map(|k| {
                let train_path = work_dir.join(format!("train.{k}.tsv"));
                let out_path = work_dir.join(format!("scores.{k}.tsv"));
                write_pairs(&train_path, corpus.pairs.iter().filter(|p| matrix.in_train(k, p.id)))?;
                let status = Command::new(program)
                    .args(args)
                    .arg("--train")
                    .arg(&train_path)
                    .arg("--eval")
                    .arg(&eval_path)
                    .arg("--out")
                    .arg(&out_path)
                    .arg("--seed")
                    .arg(k.to_string())
                    .status()
                    .map_err(|e| Error::Scorer {
                        seed: k as u32,
                        message: format!("could not start {program}: {e}"),
                    })?;
                if !status.success() {
                    return Err(Error::Scorer {
                        seed: k as u32,
                        message: format!("exited with {status}"),
                    });
                }
                read_seed_log(&out_path, k as u32)
            })
            .collect()
    });
    let mut logs = Vec::with_capacity(matrix.n_seeds() * matrix.n_examples());
    for r in per_seed {
        logs.extend(r?);
    }
    Ok(logs)
}
