use std::fmt::Write as _;

use anyhow::Result;
use memcart::artifact::read_map_artifact;
use memcart::cartography::{
    compare_maps, correlation_table, grid_coordinates, group_centroids, join_on_source, probability_buckets,
    read_labels, trace_cm_of_examples, trigram_uniqueness,
};
use memcart::corpus::text::whitespace_tokens;
use memcart::features::FEATURE_NAMES;
use memcart::metrics::Metric;

use super::{emit, fmt_opt, read_lines};
use crate::cli::{
    AnalyzeBucketsArgs, AnalyzeCentroidsArgs, AnalyzeCompareArgs, AnalyzeCorrArgs, AnalyzeTraceArgs,
    AnalyzeTrigramsArgs,
};
use crate::config::Config;
use crate::tsv::{read_ids, read_numbers};

fn join_counts(h: &[usize]) -> String {
    h.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn corr(cfg: &Config, a: AnalyzeCorrArgs) -> Result<()> {
    let mut r = cfg.section("analyze_corr");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let out = r.opt_path("out", a.out)?;
    let table = correlation_table(&map)?;
    let mut text = format!("#rows={}\nfeature\ttm\tgs\tcm\n", table.n_rows);
    for (name, row) in FEATURE_NAMES.iter().zip(&table.feature_metric) {
        let _ = writeln!(text, "{name}\t{}\t{}\t{}", fmt_opt(row[0]), fmt_opt(row[1]), fmt_opt(row[2]));
    }
    let _ = writeln!(text, "\nfeature\t{}", FEATURE_NAMES.join("\t"));
    for (name, row) in FEATURE_NAMES.iter().zip(&table.feature_feature) {
        let vals: Vec<String> = row.iter().map(|v| fmt_opt(*v)).collect();
        let _ = writeln!(text, "{name}\t{}", vals.join("\t"));
    }
    emit(out.as_deref(), &text)
}

pub fn compare(cfg: &Config, a: AnalyzeCompareArgs) -> Result<()> {
    let mut r = cfg.section("analyze_compare");
    let map_a = read_map_artifact(&r.path("map_a", a.map_a)?)?;
    let map_b = read_map_artifact(&r.path("map_b", a.map_b)?)?;
    let join = match (r.opt_path("source_a", a.source_a)?, r.opt_path("source_b", a.source_b)?) {
        (Some(sa), Some(sb)) => join_on_source(&read_lines(&sa)?, &read_lines(&sb)?),
        (None, None) => (0..map_a.len().min(map_b.len())).map(|i| (i, i)).collect(),
        _ => anyhow::bail!("give both --source-a and --source-b, or neither"),
    };
    let out = r.opt_path("out", a.out)?;
    let mut text = format!("#joined={}\nmetric\tpearson_r\n", join.len());
    for m in Metric::ALL {
        let v = compare_maps(&map_a, &map_b, &join, m).ok();
        let _ = writeln!(text, "{m}\t{}", fmt_opt(v));
    }
    emit(out.as_deref(), &text)
}

pub fn trigrams(cfg: &Config, a: AnalyzeTrigramsArgs) -> Result<()> {
    let mut r = cfg.section("analyze_trigrams");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let tokens: Vec<Vec<String>> = read_lines(&r.path("text", a.text)?)?
        .iter()
        .map(|l| whitespace_tokens(l))
        .collect();
    let grid = grid_coordinates(r.value("step", a.step, 0.1)?)?;
    let out = r.opt_path("out", a.out)?;
    let u = trigram_uniqueness(&map, &grid, &tokens)?;
    let mut text = String::from("i\tj\tuniqueness\n");
    for (c, v) in grid.iter().zip(u) {
        let _ = writeln!(text, "{}\t{}\t{}", c.i(), c.j(), fmt_opt(v));
    }
    emit(out.as_deref(), &text)
}

pub fn buckets(cfg: &Config, a: AnalyzeBucketsArgs) -> Result<()> {
    let mut r = cfg.section("analyze_buckets");
    let baseline = read_numbers(&r.path("baseline", a.baseline)?)?;
    let condition = read_numbers(&r.path("condition", a.condition)?)?;
    let n = r.value("buckets", a.buckets, 10)?;
    let out = r.opt_path("out", a.out)?;
    let mut text = String::from("lower\tupper\tn_tokens\tbaseline_mean\tcondition_mean\tdelta\n");
    for b in probability_buckets(&baseline, &condition, n)? {
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}",
            b.lower,
            b.upper,
            b.n_tokens,
            fmt_opt(b.baseline_mean),
            fmt_opt(b.condition_mean),
            fmt_opt(b.delta)
        );
    }
    emit(out.as_deref(), &text)
}

pub fn centroids(cfg: &Config, a: AnalyzeCentroidsArgs) -> Result<()> {
    let mut r = cfg.section("analyze_centroids");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let labels = read_labels(&r.path("labels", a.labels)?)?;
    let out = r.opt_path("out", a.out)?;
    let mut text = String::from("label\tn\ttm\tgs\ttm_histogram\tgs_histogram\n");
    for c in group_centroids(&map, &labels)? {
        let _ = writeln!(
            text,
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
            c.label,
            c.n,
            c.tm,
            c.gs,
            join_counts(&c.tm_histogram),
            join_counts(&c.gs_histogram)
        );
    }
    emit(out.as_deref(), &text)
}

pub fn trace(cfg: &Config, a: AnalyzeTraceArgs) -> Result<()> {
    let mut r = cfg.section("analyze_trace");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let ids = read_ids(&r.path("ids", a.ids)?)?;
    let out = r.opt_path("out", a.out)?;
    let s = trace_cm_of_examples(&map, &ids)?;
    let text = format!(
        "n\tmean_cm\tsd_cm\tcm_histogram\n{}\t{:.6}\t{:.6}\t{}\n",
        s.n,
        s.mean,
        s.sd,
        join_counts(&s.histogram)
    );
    emit(out.as_deref(), &text)
}
