//! Line-delimited likelihood logs produced by scorers.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::MembershipMatrix;
use crate::ExampleId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn from_membership(in_train: bool) -> Self {
        if in_train { Split::Train } else { Split::Heldout }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One model's aggregated likelihood of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLog {
    pub seed: u32,
    pub example_id: ExampleId,
    pub split: Split,
    /// Mean natural-log probability per target BPE token.
    pub mean_token_logprob: f64,
    pub target_len: usize,
    pub hyp_mean_token_logprob: Option<f64>,
}

fn column_of(line: &str, field: usize) -> usize {
    line.split('\t').take(field).map(|f| f.chars().count() + 1).sum::<usize>() + 1
}

fn parse_logprob(raw: &str, ctx: &str, line_no: usize, line: &str, field: usize) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::parse(ctx, line_no, column_of(line, field), format!("bad log-probability {raw:?}")))?;
    if v.is_nan() || v > 0.0 {
        return Err(Error::parse(
            ctx,
            line_no,
            column_of(line, field),
            format!("log-probability must be <= 0, got {raw}"),
        ));
    }
    Ok(v)
}

/// Parses `example_id<TAB>split<TAB>mean_token_logprob<TAB>target_len[<TAB>hyp]`.
pub fn parse_score_line(line: &str, seed: u32, ctx: &str, line_no: usize) -> Result<ScoreLog> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(Error::parse(
            ctx,
            line_no,
            1,
            format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
        ));
    }
    let example_id = fields[0]
        .parse()
        .map_err(|_| Error::parse(ctx, line_no, 1, format!("bad example id {:?}", fields[0])))?;
    let split = fields[1]
        .parse()
        .map_err(|m: String| Error::parse(ctx, line_no, column_of(line, 1), m))?;
    let mean_token_logprob = parse_logprob(fields[2], ctx, line_no, line, 2)?;
    let target_len = fields[3]
        .parse::<usize>()
        .ok()
        .filter(|&l| l >= 1)
        .ok_or_else(|| Error::parse(ctx, line_no, column_of(line, 3), format!("bad target length {:?}", fields[3])))?;
    let hyp_mean_token_logprob = match fields.get(4) {
        Some(raw) => Some(parse_logprob(raw, ctx, line_no, line, 4)?),
        None => None,
    };
    Ok(ScoreLog {
        seed,
        example_id,
        split,
        mean_token_logprob,
        target_len,
        hyp_mean_token_logprob,
    })
}

pub fn format_score_line(log: &ScoreLog) -> String {
    let mut s = format!(
        "{}\t{}\t{}\t{}",
        log.example_id, log.split, log.mean_token_logprob, log.target_len
    );
    if let Some(h) = log.hyp_mean_token_logprob {
        s.push('\t');
        s.push_str(&h.to_string());
    }
    s
}

/// Reads one scorer output file for a given seed.
pub fn read_seed_log(path: &Path, seed: u32) -> Result<Vec<ScoreLog>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut logs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        logs.push(parse_score_line(&line, seed, &ctx, i + 1)?);
    }
    Ok(logs)
}

/// Merged ensemble log: the per-seed format prefixed by a seed column.
pub fn write_ensemble_log(logs: &[ScoreLog], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#seed\texample_id\tsplit\tmean_token_logprob\ttarget_len\thyp_mean_token_logprob").map_err(io)?;
    for log in logs {
        writeln!(w, "{}\t{}", log.seed, format_score_line(log)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_ensemble_log(path: &Path) -> Result<Vec<ScoreLog>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut logs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (seed, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&ctx, i + 1, 1, "missing seed column"))?;
        let seed = seed
            .parse()
            .map_err(|_| Error::parse(&ctx, i + 1, 1, format!("bad seed {seed:?}")))?;
        logs.push(parse_score_line(rest, seed, &ctx, i + 1)?);
    }
    Ok(logs)
}

/// Checks a merged log set against the membership matrix and returns it
/// sorted by `(seed, example_id)`, so the result does not depend on the
/// order in which seeds finished.
pub fn validate_logs(matrix: &MembershipMatrix, mut logs: Vec<ScoreLog>) -> Result<Vec<ScoreLog>> {
    let k = matrix.n_seeds();
    let n = matrix.n_examples();
    let mut seen = vec![false; k * n];
    for log in &logs {
        let seed = log.seed as usize;
        if seed >= k || log.example_id >= n {
            return Err(Error::InvalidArgument(format!(
                "log entry (seed {}, example {}) outside the {k} x {n} membership matrix",
                log.seed, log.example_id
            )));
        }
        let expected = Split::from_membership(matrix.in_train(seed, log.example_id));
        if log.split != expected {
            return Err(Error::InvalidArgument(format!(
                "seed {} example {} tagged {} but membership says {expected}",
                log.seed, log.example_id, log.split
            )));
        }
        let slot = &mut seen[seed * n + log.example_id];
        if *slot {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry for seed {} example {}",
                log.seed, log.example_id
            )));
        }
        *slot = true;
    }
    let gaps: Vec<(u32, ExampleId)> = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(i, _)| ((i / n) as u32, i % n))
        .collect();
    if !gaps.is_empty() {
        return Err(Error::MissingScores(gaps));
    }
    logs.sort_by_key(|l| (l.seed, l.example_id));
    Ok(logs)
}
