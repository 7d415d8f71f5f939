//! Statistics over a finished map: rank correlations with features,
//! cross-map agreement, trigram diversity per region, token-probability
//! buckets and label centroids.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::MemorisationMap;
use super::grid::{GridCoordinate, assign_regions};
use crate::ExampleId;
use crate::error::{Error, Result};
use crate::features::N_FEATURES;
use crate::metrics::Metric;
use crate::stats::{average_ranks, mean, pearson, population_std, spearman, unit_histogram};

pub const HISTOGRAM_BINS: usize = 20;

/// Spearman coefficients; `None` where a column is constant or fewer than
/// three rows carry both values.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    /// `feature_metric[f][m]`, metrics in `Metric::ALL` order.
    pub feature_metric: Vec<[Option<f64>; 3]>,
    pub feature_feature: Vec<Vec<Option<f64>>>,
    pub n_rows: usize,
}

struct Column {
    values: Vec<Option<f64>>,
    /// Ranks over all rows, present when no value is missing.
    full_ranks: Option<Vec<f64>>,
}

impl Column {
    fn new(values: Vec<Option<f64>>) -> Self {
        let full: Option<Vec<f64>> = values.iter().copied().collect();
        Column {
            full_ranks: full.map(|v| average_ranks(&v)),
            values,
        }
    }
}

fn pairwise_spearman(a: &Column, b: &Column) -> Option<f64> {
    if let (Some(ra), Some(rb)) = (&a.full_ranks, &b.full_ranks) {
        return pearson(ra, rb).ok();
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .zip(&b.values)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    spearman(&xs, &ys).ok()
}

/// Feature-by-metric and feature-by-feature Spearman matrices over valid
/// rows, each entry using the rows where both columns are present.
pub fn correlation_table(map: &MemorisationMap) -> Result<CorrelationTable> {
    let rows: Vec<_> = map.rows().iter().filter(|r| r.record.is_valid()).collect();
    let n_complete = rows.iter().filter(|r| r.features.is_complete()).count();
    if n_complete < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlations need at least 3 examples with complete features, got {n_complete}"
        )));
    }
    let features: Vec<Column> = (0..N_FEATURES)
        .into_par_iter()
        .map(|f| Column::new(rows.iter().map(|r| r.features.get(f)).collect()))
        .collect();
    let metrics: Vec<Column> = Metric::ALL
        .par_iter()
        .map(|&m| Column::new(rows.iter().map(|r| r.record.get(m)).collect()))
        .collect();
    let feature_metric = features
        .par_iter()
        .map(|f| std::array::from_fn(|m| pairwise_spearman(f, &metrics[m])))
        .collect();
    let feature_feature = (0..N_FEATURES)
        .into_par_iter()
        .map(|a| {
            (0..N_FEATURES)
                .map(|b| pairwise_spearman(&features[a], &features[b]))
                .collect()
        })
        .collect();
    Ok(CorrelationTable {
        feature_metric,
        feature_feature,
        n_rows: rows.len(),
    })
}

/// Pairs `(id_a, id_b)` whose source sentences are identical. Each source
/// in `a` joins the first matching line of `b`.
pub fn join_on_source(sources_a: &[String], sources_b: &[String]) -> Vec<(ExampleId, ExampleId)> {
    let mut first_b: HashMap<&str, ExampleId> = HashMap::new();
    for (i, s) in sources_b.iter().enumerate() {
        first_b.entry(s.as_str()).or_insert(i);
    }
    sources_a
        .iter()
        .enumerate()
        .filter_map(|(i, s)| first_b.get(s.as_str()).map(|&j| (i, j)))
        .collect()
}

/// Pearson r of `metric` between two maps over the joined ids that are
/// valid in both.
pub fn compare_maps(
    a: &MemorisationMap,
    b: &MemorisationMap,
    join: &[(ExampleId, ExampleId)],
    metric: Metric,
) -> Result<f64> {
    if join.is_empty() {
        return Err(Error::InvalidArgument("empty join between maps".into()));
    }
    let unknown: Vec<ExampleId> = join
        .iter()
        .filter(|(ia, ib)| *ia >= a.len() || *ib >= b.len())
        .map(|&(ia, _)| ia)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = join
        .iter()
        .filter_map(|&(ia, ib)| Some((a.rows()[ia].record.get(metric)?, b.rows()[ib].record.get(metric)?)))
        .unzip();
    pearson(&xs, &ys)
}

/// Distinct over total token trigrams among the examples nearest to each
/// coordinate. `tokens` is indexed by example id.
pub fn trigram_uniqueness(
    map: &MemorisationMap,
    grid: &[GridCoordinate],
    tokens: &[Vec<String>],
) -> Result<Vec<Option<f64>>> {
    if tokens.len() != map.len() {
        return Err(Error::DimensionMismatch {
            expected: map.len(),
            found: tokens.len(),
        });
    }
    let mut members = vec![Vec::new(); grid.len()];
    for (id, g) in assign_regions(map, grid) {
        members[g].push(id);
    }
    Ok(members
        .par_iter()
        .map(|ids| {
            let mut seen: HashSet<[&str; 3]> = HashSet::new();
            let mut total = 0usize;
            for &id in ids {
                for w in tokens[id].windows(3) {
                    total += 1;
                    seen.insert([&w[0], &w[1], &w[2]]);
                }
            }
            (total > 0).then(|| seen.len() as f64 / total as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketDelta {
    pub lower: f64,
    pub upper: f64,
    pub n_tokens: usize,
    pub baseline_mean: Option<f64>,
    pub condition_mean: Option<f64>,
    /// `condition_mean - baseline_mean`, `None` for an empty bucket.
    pub delta: Option<f64>,
}

/// Buckets aligned token probabilities by their baseline value
/// (equal-width on `[0, 1]`) and reports the mean shift per bucket.
pub fn probability_buckets(baseline: &[f64], condition: &[f64], n_buckets: usize) -> Result<Vec<BucketDelta>> {
    if baseline.len() != condition.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            found: condition.len(),
        });
    }
    if n_buckets == 0 {
        return Err(Error::InvalidArgument("need at least one bucket".into()));
    }
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_buckets];
    for (&b, &c) in baseline.iter().zip(condition) {
        let g = &mut groups[crate::stats::unit_bin(b, n_buckets)];
        g.0.push(b);
        g.1.push(c);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(k, (b, c))| {
            let (bm, cm) = (mean(&b), mean(&c));
            BucketDelta {
                lower: k as f64 / n_buckets as f64,
                upper: (k + 1) as f64 / n_buckets as f64,
                n_tokens: b.len(),
                baseline_mean: bm,
                condition_mean: cm,
                delta: bm.zip(cm).map(|(b, c)| c - b),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub label: String,
    pub n: usize,
    pub tm: f64,
    pub gs: f64,
    pub tm_histogram: Vec<usize>,
    pub gs_histogram: Vec<usize>,
}

/// Reads `id<TAB>label,label,...` lines.
pub fn read_labels(path: &Path) -> Result<Vec<(ExampleId, Vec<String>)>> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, labels) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&ctx, i + 1, 1, "expected id<TAB>labels"))?;
        let id = id
            .trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, i + 1, 1, format!("bad example id {id:?}")))?;
        let labels = labels
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        out.push((id, labels));
    }
    Ok(out)
}

/// Mean (tm, gs) and 20-bin marginals per label over valid examples. An
/// example with several labels counts towards each.
pub fn group_centroids(map: &MemorisationMap, labels: &[(ExampleId, Vec<String>)]) -> Result<Vec<Centroid>> {
    let unknown: Vec<ExampleId> = labels.iter().map(|(id, _)| *id).filter(|&id| id >= map.len()).collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (id, ls) in labels {
        let Some(m) = map.rows()[*id].record.metrics else { continue };
        let unique: HashSet<&str> = ls.iter().map(String::as_str).collect();
        for l in unique {
            groups.entry(l).or_default().push((m.tm, m.gs));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(label, pts)| {
            let (tms, gss): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            Centroid {
                label: label.to_owned(),
                n: tms.len(),
                tm: mean(&tms).unwrap_or(f64::NAN),
                gs: mean(&gss).unwrap_or(f64::NAN),
                tm_histogram: unit_histogram(tms.iter().copied(), HISTOGRAM_BINS),
                gs_histogram: unit_histogram(gss.iter().copied(), HISTOGRAM_BINS),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub n: usize,
    /// Mean tm, gs, cm; `None` for an empty region.
    pub means: Option<[f64; 3]>,
    pub feature_means: [Option<f64>; N_FEATURES],
    pub cm_histogram: Vec<usize>,
}

/// Counts and means over the valid examples inside `bounds`.
pub fn region_summary(map: &MemorisationMap, bounds: super::Bounds) -> Result<RegionSummary> {
    bounds.validate()?;
    let rows: Vec<_> = map
        .rows()
        .iter()
        .filter(|r| r.record.metrics.is_some_and(|m| bounds.contains(m.tm, m.gs)))
        .collect();
    let column = |f: &dyn Fn(&super::MapRow) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
        mean(&v)
    };
    let means = (!rows.is_empty()).then(|| {
        Metric::ALL.map(|m| column(&|r| r.record.get(m)).unwrap_or(f64::NAN))
    });
    Ok(RegionSummary {
        n: rows.len(),
        means,
        feature_means: std::array::from_fn(|i| column(&|r| r.features.get(i))),
        cm_histogram: unit_histogram(rows.iter().filter_map(|r| r.record.get(Metric::Cm)), HISTOGRAM_BINS),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmSummary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub histogram: Vec<usize>,
}

/// Distribution of CM over the valid examples among `ids`.
pub fn trace_cm_of_examples(map: &MemorisationMap, ids: &[ExampleId]) -> Result<CmSummary> {
    let unknown: Vec<ExampleId> = ids.iter().copied().filter(|&id| id >= map.len()).collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let cms: Vec<f64> = ids.iter().filter_map(|&id| map.rows()[id].record.get(Metric::Cm)).collect();
    let (Some(m), Some(sd)) = (mean(&cms), population_std(&cms)) else {
        return Err(Error::InvalidArgument("no valid examples to trace".into()));
    };
    Ok(CmSummary {
        n: cms.len(),
        mean: m,
        sd,
        histogram: unit_histogram(cms.iter().copied(), HISTOGRAM_BINS),
    })
}
