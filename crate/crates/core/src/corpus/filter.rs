use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::Corpus;
use super::text::{is_digit_token, is_punct_token, whitespace_tokens, words};
use crate::ExampleId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    /// Source/target whitespace length ratio in `[2/3, 3/2]`.
    LengthRatio,
    /// Punctuation token ratio below 0.5 on each side.
    PunctuationRatio,
    /// Under 30% of source words also occur in the target.
    WordOverlap,
    /// Over 90% of target numbers also occur in the source.
    DigitAgreement,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::LengthRatio,
        Criterion::PunctuationRatio,
        Criterion::WordOverlap,
        Criterion::DigitAgreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::LengthRatio => "length_ratio",
            Criterion::PunctuationRatio => "punctuation_ratio",
            Criterion::WordOverlap => "word_overlap",
            Criterion::DigitAgreement => "digit_agreement",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: Vec<ExampleId>,
    /// Pairs failing each criterion; a pair failing several counts once
    /// under each.
    pub rejections: [usize; 4],
    pub rejected: usize,
    pub total: usize,
}

impl FilterReport {
    pub fn rejected_by(&self, c: Criterion) -> usize {
        self.rejections[c.index()]
    }
}

pub(crate) fn punct_ratio(tokens: &[String]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().filter(|t| is_punct_token(t)).count() as f64 / tokens.len() as f64
}

/// Fraction of source word positions whose word also occurs in the target.
pub(crate) fn source_word_overlap(src: &[String], trg: &[String]) -> Option<f64> {
    let src_words = words(src);
    if src_words.is_empty() {
        return None;
    }
    let trg_words: HashSet<String> = words(trg).into_iter().collect();
    let shared = src_words.iter().filter(|w| trg_words.contains(*w)).count();
    Some(shared as f64 / src_words.len() as f64)
}

/// Criteria a single pair violates, in criterion order.
pub fn failed_criteria(src: &[String], trg: &[String]) -> Vec<Criterion> {
    let mut failed = Vec::new();
    let (s, t) = (src.len(), trg.len());
    // 2/3 <= s/t <= 3/2, in integers
    if t == 0 || 3 * s < 2 * t || 2 * s > 3 * t {
        failed.push(Criterion::LengthRatio);
    }
    if punct_ratio(src) >= 0.5 || punct_ratio(trg) >= 0.5 {
        failed.push(Criterion::PunctuationRatio);
    }
    if source_word_overlap(src, trg).unwrap_or(0.0) >= 0.30 {
        failed.push(Criterion::WordOverlap);
    }
    let trg_numbers: Vec<&String> = trg.iter().filter(|t| is_digit_token(t)).collect();
    if !trg_numbers.is_empty() {
        let src_numbers: HashSet<&String> = src.iter().filter(|t| is_digit_token(t)).collect();
        let present = trg_numbers.iter().filter(|n| src_numbers.contains(**n)).count();
        if present as f64 / trg_numbers.len() as f64 <= 0.9 {
            failed.push(Criterion::DigitAgreement);
        }
    }
    failed
}

/// Applies the four corpus-selection criteria to whitespace-tokenized text.
pub fn filter_corpus(corpus: &Corpus) -> FilterReport {
    let verdicts: Vec<(ExampleId, Vec<Criterion>)> = corpus
        .pairs
        .par_iter()
        .map(|p| {
            let src = whitespace_tokens(&p.source);
            let trg = whitespace_tokens(&p.target);
            (p.id, failed_criteria(&src, &trg))
        })
        .collect();
    let mut report = FilterReport {
        kept: Vec::new(),
        rejections: [0; 4],
        rejected: 0,
        total: verdicts.len(),
    };
    for (id, failed) in verdicts {
        if failed.is_empty() {
            report.kept.push(id);
        } else {
            report.rejected += 1;
            for c in failed {
                report.rejections[c.index()] += 1;
            }
        }
    }
    report
}

/// TSV `criterion<TAB>count`, followed by `rejected` and `kept` totals.
pub fn write_rejection_report(report: &FilterReport, path: &Path) -> Result<()> {
    let mut body = String::from("criterion\tcount\n");
    for c in Criterion::ALL {
        body.push_str(&format!("{}\t{}\n", c.name(), report.rejected_by(c)));
    }
    body.push_str(&format!("rejected\t{}\n", report.rejected));
    body.push_str(&format!("kept\t{}\n", report.kept.len()));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        whitespace_tokens(s)
    }

    #[test]
    fn ratio_two_and_a_half_is_rejected() {
        let src = toks("a b c d e f g h i j");
        let trg = toks("u v w x");
        assert_eq!(failed_criteria(&src, &trg), vec![Criterion::LengthRatio]);
    }

    #[test]
    fn ratio_bounds_are_inclusive() {
        assert!(failed_criteria(&toks("a b"), &toks("x y z")).is_empty());
        assert!(failed_criteria(&toks("a b c"), &toks("x y")).is_empty());
    }

    #[test]
    fn identical_sentences_fail_overlap() {
        let s = toks("the cat sat down");
        assert_eq!(failed_criteria(&s, &s), vec![Criterion::WordOverlap]);
    }

    #[test]
    fn overlap_is_case_folded() {
        let f = failed_criteria(&toks("Haus Katze Hund Maus"), &toks("haus cat dog mouse"));
        assert!(f.is_empty(), "1/4 < 0.3: {f:?}");
        let f = failed_criteria(&toks("Haus Katze Hund"), &toks("haus cat dog"));
        assert_eq!(f, vec![Criterion::WordOverlap], "1/3 >= 0.3");
    }

    #[test]
    fn unknown_target_number_fails() {
        let f = failed_criteria(&toks("he was born in spring"), &toks("er wurde 1999 geboren"));
        assert_eq!(f, vec![Criterion::DigitAgreement]);
        let f = failed_criteria(&toks("he was born in 1999"), &toks("er wurde 1999 geboren"));
        assert!(f.is_empty());
    }

    #[test]
    fn punctuation_on_either_side() {
        let f = failed_criteria(&toks(". , ! a"), &toks("x y z w"));
        assert!(f.contains(&Criterion::PunctuationRatio));
        let f = failed_criteria(&toks("a b c d"), &toks("x . , !"));
        assert!(f.contains(&Criterion::PunctuationRatio));
    }

    #[test]
    fn report_counts() {
        let corpus = Corpus::from_pairs([
            ("a b c d e f g h i j", "u v w x"),
            ("the cat sat down", "the cat sat down"),
            ("ich bin hier", "i am here"),
        ]);
        let r = filter_corpus(&corpus);
        assert_eq!(r.kept, vec![2]);
        assert_eq!(r.rejected_by(Criterion::LengthRatio), 1);
        assert_eq!(r.rejected_by(Criterion::WordOverlap), 1);
        assert_eq!(r.rejected, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        write_rejection_report(&r, &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.contains("length_ratio\t1\n"));
        assert!(text.ends_with("kept\t1\n"));
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(
            rows in proptest::collection::vec(("[a-d1., ]{1,20}", "[a-f2., ]{1,20}"), 1..40)
        ) {
            let rows: Vec<(String, String)> = rows
                .into_iter()
                .filter(|(s, t)| !s.trim().is_empty() && !t.trim().is_empty())
                .collect();
            let corpus = Corpus::from_pairs(rows.clone());
            let first = filter_corpus(&corpus);
            let kept = Corpus::from_pairs(first.kept.iter().map(|&i| rows[i].clone()));
            let second = filter_corpus(&kept);
            prop_assert_eq!(second.rejected, 0);
            prop_assert_eq!(second.kept.len(), first.kept.len());
        }
    }
}
