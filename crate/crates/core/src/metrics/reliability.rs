use super::{MemorisationRecord, Metric, aggregate_logs};
use crate::ensemble::{MembershipMatrix, ScoreLog};
use crate::error::{Error, Result};
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityReport {
    pub r: f64,
    /// Examples valid in both halves.
    pub n_used: usize,
    pub n_skipped: usize,
}

/// LL records computed from the seeds in `seeds` only.
pub fn ll_records_for_seeds(
    matrix: &MembershipMatrix,
    logs: &[ScoreLog],
    seeds: std::ops::Range<u32>,
) -> Vec<MemorisationRecord> {
    aggregate_logs(matrix.n_examples(), logs, |s| seeds.contains(&s))
}

/// Records from the first `floor(K/2)` seeds and from the last `ceil(K/2)`.
pub fn split_half_records(
    matrix: &MembershipMatrix,
    logs: &[ScoreLog],
) -> (Vec<MemorisationRecord>, Vec<MemorisationRecord>) {
    let k = matrix.n_seeds() as u32;
    let mid = k / 2;
    (
        ll_records_for_seeds(matrix, logs, 0..mid),
        ll_records_for_seeds(matrix, logs, mid..k),
    )
}

/// Pearson r of one metric between two record sets over the example ids
/// valid in both. With `capped = false` the CM metric uses `tm - gs`.
pub fn split_half_reliability(
    half_a: &[MemorisationRecord],
    half_b: &[MemorisationRecord],
    metric: Metric,
    capped: bool,
) -> Result<ReliabilityReport> {
    if half_a.len() != half_b.len() {
        return Err(Error::DimensionMismatch {
            expected: half_a.len(),
            found: half_b.len(),
        });
    }
    let value = |r: &MemorisationRecord| {
        r.metrics.map(|m| match (metric, capped) {
            (Metric::Cm, false) => m.raw_cm(),
            _ => m.get(metric),
        })
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (a, b) in half_a.iter().zip(half_b) {
        if a.example_id != b.example_id {
            return Err(Error::InvalidArgument(format!(
                "halves are not aligned: example {} vs {}",
                a.example_id, b.example_id
            )));
        }
        if let (Some(x), Some(y)) = (value(a), value(b)) {
            xs.push(x);
            ys.push(y);
        }
    }
    let r = pearson(&xs, &ys)?;
    Ok(ReliabilityReport {
        r,
        n_used: xs.len(),
        n_skipped: half_a.len() - xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flags::Flags;
    use crate::metrics::{Metrics, Status, Variant};

    fn rec(id: usize, tm: f64, gs: f64) -> MemorisationRecord {
        MemorisationRecord {
            example_id: id,
            variant: Variant::Ll,
            status: Status::Ok,
            metrics: Some(Metrics::new(tm, gs)),
            n_train_models: 1,
            n_heldout_models: 1,
            flags: Flags::NONE,
        }
    }

    #[test]
    fn identical_and_reversed_halves() {
        let a: Vec<_> = (0..10).map(|i| rec(i, 0.5 + i as f64 * 0.04, 0.1)).collect();
        let r = split_half_reliability(&a, &a, Metric::Cm, true).unwrap();
        assert!((r.r - 1.0).abs() < 1e-12);
        let b: Vec<_> = (0..10).map(|i| rec(i, 0.9 - i as f64 * 0.04, 0.1)).collect();
        let r = split_half_reliability(&a, &b, Metric::Cm, true).unwrap();
        assert!((r.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_half_is_undefined() {
        let a: Vec<_> = (0..10).map(|i| rec(i, 0.5, 0.1)).collect();
        let b: Vec<_> = (0..10).map(|i| rec(i, 0.5 + i as f64 * 0.01, 0.1)).collect();
        assert!(matches!(
            split_half_reliability(&a, &b, Metric::Tm, true),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn null_records_are_skipped() {
        let mut a: Vec<_> = (0..6).map(|i| rec(i, 0.1 * i as f64, 0.0)).collect();
        a[2] = MemorisationRecord::null(2, Variant::Ll, Status::EmptyTrain);
        let r = split_half_reliability(&a, &a, Metric::Tm, true).unwrap();
        assert_eq!((r.n_used, r.n_skipped), (5, 1));
    }
}
