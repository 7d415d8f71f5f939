//! Training signals from the per-epoch likelihoods of a diagnostic run.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::ExampleId;
use crate::error::{Error, Result};
use crate::flags::Flags;
use crate::metrics::prob_from_mean_logprob;

pub const N_SIGNALS: usize = 6;

pub const SIGNAL_NAMES: [&str; N_SIGNALS] = [
    "confidence",
    "variability",
    "final_likelihood",
    "forgetting",
    "hyp_likelihood",
    "final_minus_confidence",
];

/// Per-epoch geometric-mean probabilities of one example, epochs `1..=E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSeries {
    pub example_id: ExampleId,
    pub target: Vec<f64>,
    pub hypothesis: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSignals {
    pub confidence: f64,
    /// `None` for single-epoch series.
    pub variability: Option<f64>,
    pub final_likelihood: f64,
    /// `None` for single-epoch series.
    pub forgetting: Option<f64>,
    pub hyp_likelihood: f64,
    pub final_minus_confidence: f64,
    pub flags: Flags,
}

impl TrainingSignals {
    pub fn to_array(&self) -> [Option<f64>; N_SIGNALS] {
        [
            Some(self.confidence),
            self.variability,
            Some(self.final_likelihood),
            self.forgetting,
            Some(self.hyp_likelihood),
            Some(self.final_minus_confidence),
        ]
    }

    pub fn from_array(values: [Option<f64>; N_SIGNALS], flags: Flags) -> Option<Self> {
        Some(Self {
            confidence: values[0]?,
            variability: values[1],
            final_likelihood: values[2]?,
            forgetting: values[3],
            hyp_likelihood: values[4]?,
            final_minus_confidence: values[5]?,
            flags,
        })
    }
}

/// Sum of all epoch-to-epoch decreases.
pub fn forgetting(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum()
}

pub fn extract_signals(series: &EpochSeries) -> Result<TrainingSignals> {
    let v = &series.target;
    let Some(&last) = v.last() else {
        return Err(Error::InvalidArgument(format!(
            "example {} has an empty epoch series",
            series.example_id
        )));
    };
    let n = v.len() as f64;
    let confidence = v.iter().sum::<f64>() / n;
    let multi = v.len() >= 2;
    let variability = multi.then(|| (v.iter().map(|x| (x - confidence).powi(2)).sum::<f64>() / n).sqrt());
    let (hyp_likelihood, flags) = match series.hypothesis.as_deref().and_then(<[f64]>::last) {
        Some(&h) => (h, Flags::NONE),
        None => (last, Flags::HYP_FALLBACK),
    };
    Ok(TrainingSignals {
        confidence,
        variability,
        final_likelihood: last,
        forgetting: multi.then(|| forgetting(v)),
        hyp_likelihood,
        final_minus_confidence: last - confidence,
        flags,
    })
}

/// One row of an epoch-indexed log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub example_id: ExampleId,
    pub mean_token_logprob: f64,
    pub target_len: usize,
    pub hyp_mean_token_logprob: Option<f64>,
}

/// `epoch<TAB>example_id<TAB>mean_token_logprob<TAB>target_len[<TAB>hyp]`.
pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (epoch, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&ctx, i + 1, 1, "missing epoch column"))?;
        let epoch: u32 = epoch
            .parse()
            .ok()
            .filter(|&e| e >= 1)
            .ok_or_else(|| Error::parse(&ctx, i + 1, 1, format!("bad epoch {epoch:?}")))?;
        // The remaining columns follow the score-log layout minus the split.
        let fields: Vec<&str> = rest.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::parse(&ctx, i + 1, 1, "expected 4 or 5 tab-separated fields"));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::parse(&ctx, i + 1, 1, format!("bad {what} {s:?}")))?;
            if v.is_nan() || v > 0.0 {
                return Err(Error::parse(&ctx, i + 1, 1, format!("{what} must be <= 0, got {s}")));
            }
            Ok(v)
        };
        out.push(EpochRecord {
            epoch,
            example_id: fields[0]
                .parse()
                .map_err(|_| Error::parse(&ctx, i + 1, 1, format!("bad example id {:?}", fields[0])))?,
            mean_token_logprob: num(fields[1], "log-probability")?,
            target_len: fields[2]
                .parse()
                .map_err(|_| Error::parse(&ctx, i + 1, 1, format!("bad target length {:?}", fields[2])))?,
            hyp_mean_token_logprob: fields.get(3).map(|s| num(s, "hypothesis log-probability")).transpose()?,
        });
    }
    Ok(out)
}

/// Groups epoch rows per example and orders them by epoch, so arrival
/// order does not matter. Examples without rows get `None`.
pub fn build_series(records: &[EpochRecord], n_examples: usize) -> Result<Vec<Option<EpochSeries>>> {
    let mut grouped: Vec<Vec<&EpochRecord>> = vec![Vec::new(); n_examples];
    for r in records {
        let slot = grouped.get_mut(r.example_id).ok_or_else(|| {
            Error::InvalidArgument(format!("epoch log names example {} beyond {n_examples}", r.example_id))
        })?;
        slot.push(r);
    }
    grouped
        .into_par_iter()
        .enumerate()
        .map(|(id, mut rows)| {
            if rows.is_empty() {
                return Ok(None);
            }
            rows.sort_by_key(|r| r.epoch);
            if rows.windows(2).any(|w| w[0].epoch == w[1].epoch) {
                return Err(Error::InvalidArgument(format!("example {id} has a duplicate epoch")));
            }
            let target = rows.iter().map(|r| prob_from_mean_logprob(r.mean_token_logprob).0).collect();
            let hypothesis = rows
                .iter()
                .map(|r| r.hyp_mean_token_logprob.map(|h| prob_from_mean_logprob(h).0))
                .collect::<Option<Vec<f64>>>();
            Ok(Some(EpochSeries {
                example_id: id,
                target,
                hypothesis,
            }))
        })
        .collect()
}

/// Signals for every example; `None` where the log had no rows.
pub fn signals_for_all(series: &[Option<EpochSeries>]) -> Result<Vec<Option<TrainingSignals>>> {
    series
        .par_iter()
        .map(|s| s.as_ref().map(extract_signals).transpose())
        .collect()
}
