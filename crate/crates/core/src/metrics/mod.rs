//! Likelihood aggregation into TM, GS and CM, the BLEU-based variant, and
//! split-half reliability.

mod bleu;
mod reliability;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::ExampleId;
use crate::ensemble::{MembershipMatrix, ScoreLog};
use crate::flags::Flags;

pub use bleu::{HypothesisSet, bleu_map_variant, corpus_mean_bleu, sentence_bleu};
pub use reliability::{ReliabilityReport, ll_records_for_seeds, split_half_records, split_half_reliability};

/// Probabilities below this are floored before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `(prod p_t)^(1/l)` in log space. The flag is set when any probability
/// had to be floored.
pub fn geometric_mean_ll(token_probs: &[f64]) -> (f64, bool) {
    if token_probs.is_empty() {
        return (f64::NAN, false);
    }
    let mut floored = false;
    let sum: f64 = token_probs
        .iter()
        .map(|&p| {
            if p.is_nan() || p < PROB_FLOOR {
                floored = true;
                PROB_FLOOR.ln()
            } else {
                p.min(1.0).ln()
            }
        })
        .sum();
    ((sum / token_probs.len() as f64).exp(), floored)
}

/// Geometric-mean probability from a logged mean token log-probability.
pub fn prob_from_mean_logprob(mean_logprob: f64) -> (f64, bool) {
    if mean_logprob.is_nan() || mean_logprob < PROB_FLOOR.ln() {
        (PROB_FLOOR, true)
    } else {
        (mean_logprob.min(0.0).exp(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ll,
    Bleu,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ll => "ll",
            Variant::Bleu => "bleu",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ll" => Ok(Variant::Ll),
            "bleu" => Ok(Variant::Bleu),
            o => Err(format!("unknown variant {o:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Tm,
    Gs,
    Cm,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Tm, Metric::Gs, Metric::Cm];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tm => "tm",
            Metric::Gs => "gs",
            Metric::Cm => "cm",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Why a record has no metric values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    EmptyTrain,
    EmptyHeldout,
    MissingHypothesis,
    /// Features or signals needed for a prediction are null.
    MissingInputs,
}

impl Status {
    const NAMES: [(Status, &'static str); 5] = [
        (Status::Ok, "ok"),
        (Status::EmptyTrain, "empty_train"),
        (Status::EmptyHeldout, "empty_heldout"),
        (Status::MissingHypothesis, "missing_hypothesis"),
        (Status::MissingInputs, "missing_inputs"),
    ];
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (_, n) = Status::NAMES.iter().find(|(s, _)| s == self).unwrap();
        f.write_str(n)
    }
}

impl FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Status::NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(st, _)| *st)
            .ok_or_else(|| format!("unknown status {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tm: f64,
    pub gs: f64,
    pub cm: f64,
}

impl Metrics {
    pub fn new(tm: f64, gs: f64) -> Self {
        Self {
            tm,
            gs,
            cm: (tm - gs).max(0.0),
        }
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Tm => self.tm,
            Metric::Gs => self.gs,
            Metric::Cm => self.cm,
        }
    }

    pub fn raw_cm(&self) -> f64 {
        self.tm - self.gs
    }
}

/// One model's geometric-mean probability of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScore {
    pub example_id: ExampleId,
    pub seed: u32,
    pub geometric_mean_prob: f64,
    pub in_train: bool,
}

/// TM/GS/CM of one example. `metrics` is `None` exactly when `status` is
/// not `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorisationRecord {
    pub example_id: ExampleId,
    pub variant: Variant,
    pub status: Status,
    pub metrics: Option<Metrics>,
    pub n_train_models: usize,
    pub n_heldout_models: usize,
    pub flags: Flags,
}

impl MemorisationRecord {
    pub fn null(example_id: ExampleId, variant: Variant, status: Status) -> Self {
        Self {
            example_id,
            variant,
            status,
            metrics: None,
            n_train_models: 0,
            n_heldout_models: 0,
            flags: Flags::NONE,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.metrics.is_some()
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        self.metrics.map(|v| v.get(m))
    }
}

/// Order-independent mean: values are summed in sorted order so the result
/// does not depend on how scores were batched or which seed came first.
pub(crate) fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Arithmetic mean over train-side and held-out-side models.
pub fn aggregate_tm_gs_cm(
    example_id: ExampleId,
    scores: &[ModelScore],
    variant: Variant,
    flags: Flags,
) -> MemorisationRecord {
    let mut train: Vec<f64> = Vec::new();
    let mut held: Vec<f64> = Vec::new();
    for s in scores {
        if s.in_train {
            train.push(s.geometric_mean_prob);
        } else {
            held.push(s.geometric_mean_prob);
        }
    }
    let status = if train.is_empty() {
        Status::EmptyTrain
    } else if held.is_empty() {
        Status::EmptyHeldout
    } else {
        Status::Ok
    };
    let mut rec = MemorisationRecord::null(example_id, variant, status);
    rec.n_train_models = train.len();
    rec.n_heldout_models = held.len();
    rec.flags = flags;
    if status == Status::Ok {
        let tm = stable_mean(&mut train).clamp(0.0, 1.0);
        let gs = stable_mean(&mut held).clamp(0.0, 1.0);
        rec.metrics = Some(Metrics::new(tm, gs));
    }
    rec
}

/// Groups validated logs by example and aggregates each. Only logs whose
/// seed is accepted by `seed_filter` contribute.
pub(crate) fn aggregate_logs(
    n_examples: usize,
    logs: &[ScoreLog],
    seed_filter: impl Fn(u32) -> bool + Sync,
) -> Vec<MemorisationRecord> {
    let mut by_example: Vec<Vec<(ModelScore, bool)>> = vec![Vec::new(); n_examples];
    for log in logs.iter().filter(|l| seed_filter(l.seed)) {
        if log.example_id >= n_examples {
            continue;
        }
        let (p, floored) = prob_from_mean_logprob(log.mean_token_logprob);
        by_example[log.example_id].push((
            ModelScore {
                example_id: log.example_id,
                seed: log.seed,
                geometric_mean_prob: p,
                in_train: log.split == crate::ensemble::Split::Train,
            },
            floored,
        ));
    }
    by_example
        .into_par_iter()
        .enumerate()
        .map(|(id, entries)| {
            let floored = entries.iter().any(|(_, f)| *f);
            let scores: Vec<ModelScore> = entries.into_iter().map(|(s, _)| s).collect();
            let flags = if floored { Flags::FLOORED } else { Flags::NONE };
            aggregate_tm_gs_cm(id, &scores, Variant::Ll, flags)
        })
        .collect()
}

/// LL-variant records for every example of the matrix.
pub fn ll_records(matrix: &MembershipMatrix, logs: &[ScoreLog]) -> Vec<MemorisationRecord> {
    aggregate_logs(matrix.n_examples(), logs, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(p: f64, in_train: bool) -> ModelScore {
        ModelScore {
            example_id: 0,
            seed: 0,
            geometric_mean_prob: p,
            in_train,
        }
    }

    #[test]
    fn geometric_mean_basics() {
        assert!((geometric_mean_ll(&[0.5, 0.5]).0 - 0.5).abs() < 1e-15);
        assert!((geometric_mean_ll(&[0.25]).0 - 0.25).abs() < 1e-15);
        let (g, floored) = geometric_mean_ll(&[0.0, 1.0]);
        assert!(floored);
        assert!((g - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn example_one() {
        let r = aggregate_tm_gs_cm(0, &[ms(0.85, true), ms(0.55, false)], Variant::Ll, Flags::NONE);
        let m = r.metrics.unwrap();
        assert!((m.cm - 0.30).abs() < 1e-12);
        let r = aggregate_tm_gs_cm(0, &[ms(0.2, true), ms(0.3, false)], Variant::Ll, Flags::NONE);
        assert_eq!(r.metrics.unwrap().cm, 0.0);
    }

    #[test]
    fn empty_side_gives_null_record() {
        let r = aggregate_tm_gs_cm(4, &[ms(0.2, true)], Variant::Ll, Flags::NONE);
        assert_eq!(r.status, Status::EmptyHeldout);
        assert!(r.metrics.is_none());
        let r = aggregate_tm_gs_cm(4, &[ms(0.2, false)], Variant::Ll, Flags::NONE);
        assert_eq!(r.status, Status::EmptyTrain);
    }

    #[test]
    fn forty_scores_match_direct_average() {
        let scores: Vec<ModelScore> = (0..40)
            .map(|k| ms(((k * 37) % 101) as f64 / 101.0 + 0.001, k % 3 != 0))
            .collect();
        let r = aggregate_tm_gs_cm(0, &scores, Variant::Ll, Flags::NONE);
        let mut tr: Vec<f64> = scores.iter().filter(|s| s.in_train).map(|s| s.geometric_mean_prob).collect();
        let mut he: Vec<f64> = scores.iter().filter(|s| !s.in_train).map(|s| s.geometric_mean_prob).collect();
        tr.sort_by(f64::total_cmp);
        he.sort_by(f64::total_cmp);
        let m = r.metrics.unwrap();
        assert_eq!(m.tm, tr.iter().sum::<f64>() / tr.len() as f64);
        assert_eq!(m.gs, he.iter().sum::<f64>() / he.len() as f64);
        assert_eq!((r.n_train_models, r.n_heldout_models), (tr.len(), he.len()));
    }

    #[test]
    fn floor_applies_to_neg_infinity() {
        let (p, f) = prob_from_mean_logprob(f64::NEG_INFINITY);
        assert!(f);
        assert_eq!(p, PROB_FLOOR);
        assert_eq!(prob_from_mean_logprob(-1.0), ((-1.0f64).exp(), false));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn log_space_matches_linear_product(ps in prop::collection::vec(1e-3f64..=1.0, 1..=8)) {
            let linear = ps.iter().product::<f64>().powf(1.0 / ps.len() as f64);
            let (g, floored) = geometric_mean_ll(&ps);
            prop_assert!(!floored);
            prop_assert!((g - linear).abs() <= 1e-9);
        }

        #[test]
        fn aggregation_is_order_invariant(
            ps in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..40),
            rot in 0usize..40,
        ) {
            let scores: Vec<ModelScore> = ps.iter().map(|&(p, t)| ms(p, t)).collect();
            let mut rotated = scores.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            let a = aggregate_tm_gs_cm(0, &scores, Variant::Ll, Flags::NONE);
            let b = aggregate_tm_gs_cm(0, &rotated, Variant::Ll, Flags::NONE);
            prop_assert_eq!(&a, &b);
            if let Some(m) = a.metrics {
                prop_assert!((m.cm - (m.tm - m.gs).max(0.0)).abs() <= 1e-12);
                for v in [m.tm, m.gs, m.cm] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
