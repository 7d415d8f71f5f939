use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use super::{MemorisationRecord, Metrics, Status, Variant, stable_mean};
use crate::ExampleId;
use crate::ensemble::MembershipMatrix;
use crate::error::{Error, Result};
use crate::flags::Flags;

const MAX_ORDER: usize = 4;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU in `[0, 100]`: clipped 4-gram precisions, brevity
/// penalty, and add-one smoothing on orders 2-4 that have no match.
pub fn sentence_bleu<S: AsRef<str>, T: AsRef<str>>(hypothesis: &[S], reference: &[T]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let total = hypothesis.len().saturating_sub(n - 1);
        let matched: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (100.0 * bp * (log_sum / MAX_ORDER as f64).exp()).clamp(0.0, 100.0)
}

/// Mean sentence BLEU over a test set. Used as the dev-set score of a run.
pub fn corpus_mean_bleu<S: AsRef<str>, T: AsRef<str>>(pairs: &[(Vec<S>, Vec<T>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(h, r)| sentence_bleu(h, r)).sum::<f64>() / pairs.len() as f64
}

/// Greedy hypotheses indexed by `(seed, example)`; `None` where missing.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    n_examples: usize,
    per_seed: Vec<Vec<Option<Vec<String>>>>,
}

impl HypothesisSet {
    pub fn new(n_seeds: usize, n_examples: usize) -> Self {
        Self {
            n_examples,
            per_seed: vec![vec![None; n_examples]; n_seeds],
        }
    }

    pub fn insert(&mut self, seed: usize, example: ExampleId, tokens: Vec<String>) -> Result<()> {
        if seed >= self.per_seed.len() || example >= self.n_examples {
            return Err(Error::InvalidArgument(format!(
                "hypothesis (seed {seed}, example {example}) outside the {} x {} set",
                self.per_seed.len(),
                self.n_examples
            )));
        }
        self.per_seed[seed][example] = Some(tokens);
        Ok(())
    }

    pub fn get(&self, seed: usize, example: ExampleId) -> Option<&[String]> {
        self.per_seed.get(seed)?.get(example)?.as_deref()
    }

    /// Reads `seed<TAB>example_id<TAB>hypothesis text` lines.
    pub fn read(path: &Path, n_seeds: usize, n_examples: usize) -> Result<Self> {
        let ctx = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = Self::new(n_seeds, n_examples);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let seed = parts.next().and_then(|s| s.parse::<usize>().ok());
            let id = parts.next().and_then(|s| s.parse::<usize>().ok());
            let (Some(seed), Some(id)) = (seed, id) else {
                return Err(Error::parse(&ctx, i + 1, 1, "expected seed<TAB>example_id<TAB>text"));
            };
            let text = parts.next().unwrap_or("");
            set.insert(seed, id, text.split_whitespace().map(str::to_owned).collect())
                .map_err(|e| Error::parse(&ctx, i + 1, 1, e.to_string()))?;
        }
        Ok(set)
    }
}

/// TM/GS from mean sentence BLEU / 100 over the train and held-out models.
/// Any missing hypothesis yields a `MissingHypothesis` record.
pub fn bleu_map_variant<S: AsRef<str> + Sync>(
    matrix: &MembershipMatrix,
    hypotheses: &HypothesisSet,
    references: &[Vec<S>],
) -> Result<Vec<MemorisationRecord>> {
    if references.len() != matrix.n_examples() {
        return Err(Error::DimensionMismatch {
            expected: matrix.n_examples(),
            found: references.len(),
        });
    }
    Ok((0..matrix.n_examples())
        .into_par_iter()
        .map(|id| {
            let mut train = Vec::new();
            let mut held = Vec::new();
            for k in 0..matrix.n_seeds() {
                let Some(h) = hypotheses.get(k, id) else {
                    return MemorisationRecord::null(id, Variant::Bleu, Status::MissingHypothesis);
                };
                let b = sentence_bleu(h, &references[id]) / 100.0;
                if matrix.in_train(k, id) {
                    train.push(b);
                } else {
                    held.push(b);
                }
            }
            let status = if train.is_empty() {
                Status::EmptyTrain
            } else if held.is_empty() {
                Status::EmptyHeldout
            } else {
                Status::Ok
            };
            let mut rec = MemorisationRecord::null(id, Variant::Bleu, status);
            rec.n_train_models = train.len();
            rec.n_heldout_models = held.len();
            rec.flags = Flags::NONE;
            if status == Status::Ok {
                rec.metrics = Some(Metrics::new(stable_mean(&mut train), stable_mean(&mut held)));
            }
            rec
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_100() {
        let h = toks("the cat sat on mats");
        assert!((sentence_bleu(&h, &h) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_case() {
        let b = sentence_bleu(&toks("a b c d"), &toks("a b c d e"));
        assert!((b - 100.0 * (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_case() {
        // p1 = 1/4, p2 = 1/4, p3 = 1/3, p4 = 1/2, no brevity penalty
        let expected = 100.0 * (0.25f64 * 0.25 * (1.0 / 3.0) * 0.5).powf(0.25);
        let b = sentence_bleu(&toks("a a a a"), &toks("a b"));
        assert!((b - expected).abs() < 1e-9, "{b}");
    }

    #[test]
    fn degenerate_inputs() {
        let empty: Vec<&str> = Vec::new();
        assert_eq!(sentence_bleu(&empty, &toks("a")), 0.0);
        assert_eq!(sentence_bleu(&toks("x y"), &toks("a b")), 0.0);
    }

    #[test]
    fn reordering_lowers_score() {
        let r = toks("a b c d e f");
        let h = toks("f e d c b a");
        assert!(sentence_bleu(&h, &r) < 100.0);
    }

    fn matrix() -> MembershipMatrix {
        MembershipMatrix::from_rows(
            2,
            vec![vec![true, false], vec![false, true], vec![true, true]],
        )
        .unwrap()
    }

    #[test]
    fn perfect_hypotheses() {
        let refs = vec![toks("a b c d"), toks("e f g h")];
        let mut hs = HypothesisSet::new(3, 2);
        for k in 0..3 {
            for i in 0..2 {
                hs.insert(k, i, refs[i].iter().map(|s| s.to_string()).collect()).unwrap();
            }
        }
        let recs = bleu_map_variant(&matrix(), &hs, &refs).unwrap();
        let m = recs[0].metrics.unwrap();
        assert_eq!((m.tm, m.gs, m.cm), (1.0, 1.0, 0.0));
        // example 1 is held out only by seed 0
        assert_eq!(recs[1].n_heldout_models, 1);
    }

    #[test]
    fn per_seed_oracle_and_missing() {
        let refs = vec![toks("a b c d e"), toks("e f g h")];
        let hyps = ["a b c d", "a a a a", "a b c d e"];
        let mut hs = HypothesisSet::new(3, 2);
        for (k, h) in hyps.iter().enumerate() {
            hs.insert(k, 0, toks(h).iter().map(|s| s.to_string()).collect()).unwrap();
        }
        let recs = bleu_map_variant(&matrix(), &hs, &refs).unwrap();
        let b: Vec<f64> = hyps.iter().map(|h| sentence_bleu(&toks(h), &refs[0]) / 100.0).collect();
        let m = recs[0].metrics.unwrap();
        let mut tr = vec![b[0], b[2]];
        tr.sort_by(f64::total_cmp);
        assert_eq!(m.tm, (tr[0] + tr[1]) / 2.0);
        assert_eq!(m.gs, b[1]);
        assert_eq!(recs[1].status, Status::MissingHypothesis);
    }
}
