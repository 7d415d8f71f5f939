//! Nearest-example removal sets around grid coordinates and the ranking of
//! regions by the performance of models trained without them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::grid::{GridCoordinate, assign_regions};
use super::MemorisationMap;
use crate::ExampleId;
use crate::error::{Error, Result};

pub const DEFAULT_TOKEN_BUDGET: usize = 750_000;
pub const DEFAULT_MIN_REGION: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalSet {
    pub coordinate: GridCoordinate,
    /// Nearest first.
    pub ids: Vec<ExampleId>,
    pub total_source_tokens: usize,
    pub budget: usize,
}

/// Greedy nearest-first prefix of valid examples whose whitespace source
/// tokens fit in `budget`. Stops at the first example that would overflow,
/// so the set is maximal for its ordering.
pub fn nearest_removal_set(
    map: &MemorisationMap,
    coordinate: GridCoordinate,
    budget: usize,
    source_tokens: &[usize],
) -> Result<RemovalSet> {
    if map.n_valid() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if source_tokens.len() != map.len() {
        return Err(Error::DimensionMismatch {
            expected: map.len(),
            found: source_tokens.len(),
        });
    }
    let mut order: Vec<(f64, ExampleId)> = map
        .points()
        .map(|p| (coordinate.distance_sq(p.tm, p.gs), p.id))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut ids = Vec::new();
    let mut total = 0;
    for (_, id) in order {
        let t = source_tokens[id];
        if total + t > budget {
            break;
        }
        total += t;
        ids.push(id);
    }
    Ok(RemovalSet {
        coordinate,
        ids,
        total_source_tokens: total,
        budget,
    })
}

/// Header: `#removal<TAB>coordinate=i,j<TAB>n=..<TAB>budget=..<TAB>tokens=..<TAB>map_hash=..`,
/// then one id per line.
pub fn write_removal_manifest(set: &RemovalSet, map_hash: &str, path: &Path) -> Result<()> {
    let mut out = format!(
        "#removal\tcoordinate={}\tn={}\tbudget={}\ttokens={}\tmap_hash={map_hash}\n",
        set.coordinate, set.coordinate.n, set.budget, set.total_source_tokens
    );
    for id in &set.ids {
        let _ = writeln!(out, "{id}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn header_fields(line: &str) -> HashMap<&str, &str> {
    line.split('\t').skip(1).filter_map(|f| f.split_once('=')).collect()
}

pub(crate) fn read_id_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>, ctx: &str) -> Result<Vec<ExampleId>> {
    let mut ids = Vec::new();
    for (i, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ids.push(
            line.trim()
                .parse()
                .map_err(|_| Error::parse(ctx, i + 1, 1, format!("bad example id {line:?}")))?,
        );
    }
    Ok(ids)
}

/// Returns the set and the map hash recorded in the header.
pub fn read_removal_manifest(path: &Path) -> Result<(RemovalSet, String)> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .filter(|(_, l)| l.starts_with("#removal"))
        .ok_or_else(|| Error::parse(&ctx, 1, 1, "missing #removal header"))?
        .1;
    let f = header_fields(header);
    let field = |k: &str| f.get(k).copied().ok_or_else(|| Error::parse(&ctx, 1, 1, format!("missing {k}")));
    let num = |k: &str| -> Result<usize> {
        field(k)?
            .parse()
            .map_err(|_| Error::parse(&ctx, 1, 1, format!("bad {k}")))
    };
    let n = num("n")? as u32;
    let coordinate = GridCoordinate::parse(field("coordinate")?, n)?;
    let set = RemovalSet {
        coordinate,
        ids: read_id_lines(lines, &ctx)?,
        total_source_tokens: num("tokens")?,
        budget: num("budget")?,
    };
    Ok((set, field("map_hash")?.to_owned()))
}

/// Dev-set outcome of one model trained without one removal set. A
/// missing coordinate marks a run on the full corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRecord {
    pub run_id: String,
    pub coordinate: Option<GridCoordinate>,
    pub seed: u32,
    pub bleu_dev: f64,
    pub mean_logprob: f64,
    pub hallucination_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerfMetric {
    Bleu,
    LogProb,
    Hallucination,
}

impl PerfMetric {
    pub const ALL: [PerfMetric; 3] = [PerfMetric::Bleu, PerfMetric::LogProb, PerfMetric::Hallucination];

    pub fn name(self) -> &'static str {
        match self {
            PerfMetric::Bleu => "bleu_dev",
            PerfMetric::LogProb => "mean_logprob",
            PerfMetric::Hallucination => "hallucination_ratio",
        }
    }

    fn of(self, r: &PerformanceRecord) -> f64 {
        match self {
            PerfMetric::Bleu => r.bleu_dev,
            PerfMetric::LogProb => r.mean_logprob,
            PerfMetric::Hallucination => r.hallucination_ratio,
        }
    }

    /// Sign that turns a delta into "relevance": removing a relevant region
    /// lowers BLEU and log-probability and raises hallucinations.
    fn relevance_sign(self) -> f64 {
        match self {
            PerfMetric::Hallucination => 1.0,
            _ => -1.0,
        }
    }
}

const PERF_HEADER: &str = "run_id\ti\tj\tseed\tbleu_dev\tmean_logprob\thallucination_ratio";

pub fn write_performance(records: &[PerformanceRecord], path: &Path) -> Result<()> {
    let mut out = format!("{PERF_HEADER}\n");
    for r in records {
        let (i, j) = match r.coordinate {
            Some(c) => (c.i().to_string(), c.j().to_string()),
            None => ("NA".into(), "NA".into()),
        };
        let _ = writeln!(
            out,
            "{}\t{i}\t{j}\t{}\t{}\t{}\t{}",
            r.run_id, r.seed, r.bleu_dev, r.mean_logprob, r.hallucination_ratio
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the performance TSV for a grid with `n` steps per axis.
pub fn read_performance(path: &Path, n: u32) -> Result<Vec<PerformanceRecord>> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || line == PERF_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(&ctx, i + 1, 1, format!("expected 7 fields, found {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| Error::parse(&ctx, i + 1, k + 1, format!("bad number {:?}", f[k])))
        };
        let coordinate = if f[1] == "NA" {
            None
        } else {
            Some(
                GridCoordinate::parse(&format!("{},{}", f[1], f[2]), n)
                    .map_err(|e| Error::parse(&ctx, i + 1, 2, e.to_string()))?,
            )
        };
        out.push(PerformanceRecord {
            run_id: f[0].to_owned(),
            coordinate,
            seed: f[3]
                .parse()
                .map_err(|_| Error::parse(&ctx, i + 1, 4, "bad seed"))?,
            bleu_dev: num(4)?,
            mean_logprob: num(5)?,
            hallucination_ratio: num(6)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStat {
    pub coordinate: GridCoordinate,
    /// Examples whose nearest coordinate this is.
    pub n_examples: usize,
    /// Of those, examples with at least one removal run.
    pub n_scored: usize,
    /// Mean example impact per performance metric, `None` if unscored.
    pub score: [Option<f64>; 3],
    /// `score - baseline`.
    pub delta: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceReport {
    pub baseline: [f64; 3],
    /// Regions at or above the size threshold, grid order.
    pub regions: Vec<RegionStat>,
    pub excluded: Vec<(GridCoordinate, usize)>,
    pub never_removed: usize,
    /// Per metric, most relevant first (up to 10) and least relevant first.
    pub top: [Vec<GridCoordinate>; 3],
    pub bottom: [Vec<GridCoordinate>; 3],
}

/// Ranks grid regions by the mean performance of the runs that removed
/// their examples, relative to the mean over all runs.
pub fn region_relevance(
    map: &MemorisationMap,
    grid: &[GridCoordinate],
    removal_sets: &[RemovalSet],
    records: &[PerformanceRecord],
    min_region: usize,
) -> Result<RelevanceReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no performance records".into()));
    }
    let by_coord: HashMap<GridCoordinate, usize> =
        removal_sets.iter().enumerate().map(|(k, s)| (s.coordinate, k)).collect();
    // per removal set: sum and count of each metric
    let mut set_sums = vec![([0.0; 3], 0usize); removal_sets.len()];
    let mut base = [0.0; 3];
    for r in records {
        for (k, m) in PerfMetric::ALL.iter().enumerate() {
            base[k] += m.of(r);
        }
        let Some(c) = r.coordinate else { continue };
        let &k = by_coord
            .get(&c)
            .ok_or_else(|| Error::InvalidArgument(format!("run {} has no removal manifest for {c}", r.run_id)))?;
        for (s, m) in set_sums[k].0.iter_mut().zip(PerfMetric::ALL) {
            *s += m.of(r);
        }
        set_sums[k].1 += 1;
    }
    let baseline = base.map(|b| b / records.len() as f64);

    let mut ex_sum = vec![[0.0; 3]; map.len()];
    let mut ex_runs = vec![0usize; map.len()];
    for (set, (sums, count)) in removal_sets.iter().zip(&set_sums) {
        if *count == 0 {
            continue;
        }
        for &id in &set.ids {
            if id >= map.len() {
                return Err(Error::UnknownIds(vec![id]));
            }
            for k in 0..3 {
                ex_sum[id][k] += sums[k];
            }
            ex_runs[id] += count;
        }
    }

    let regions_of = assign_regions(map, grid);
    let mut n_examples = vec![0usize; grid.len()];
    let mut n_scored = vec![0usize; grid.len()];
    let mut impact_sum = vec![[0.0; 3]; grid.len()];
    let mut never_removed = 0;
    for &(id, g) in &regions_of {
        n_examples[g] += 1;
        if ex_runs[id] == 0 {
            never_removed += 1;
            continue;
        }
        n_scored[g] += 1;
        for k in 0..3 {
            impact_sum[g][k] += ex_sum[id][k] / ex_runs[id] as f64;
        }
    }

    let mut regions = Vec::new();
    let mut excluded = Vec::new();
    for (g, coord) in grid.iter().enumerate() {
        if n_examples[g] < min_region {
            excluded.push((*coord, n_examples[g]));
            continue;
        }
        let score: [Option<f64>; 3] =
            std::array::from_fn(|k| (n_scored[g] > 0).then(|| impact_sum[g][k] / n_scored[g] as f64));
        regions.push(RegionStat {
            coordinate: *coord,
            n_examples: n_examples[g],
            n_scored: n_scored[g],
            score,
            delta: std::array::from_fn(|k| score[k].map(|s| s - baseline[k])),
        });
    }

    let rank = |k: usize| -> Vec<GridCoordinate> {
        let sign = PerfMetric::ALL[k].relevance_sign();
        let mut scored: Vec<(f64, GridCoordinate)> = regions
            .iter()
            .filter_map(|r| r.delta[k].map(|d| (sign * d, r.coordinate)))
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        scored.into_iter().map(|(_, c)| c).collect()
    };
    let ranked: [Vec<GridCoordinate>; 3] = std::array::from_fn(rank);
    let top = ranked.clone().map(|v| v.into_iter().take(10).collect());
    let bottom = ranked.map(|v| v.into_iter().rev().take(10).collect());
    Ok(RelevanceReport {
        baseline,
        regions,
        excluded,
        never_removed,
        top,
        bottom,
    })
}
