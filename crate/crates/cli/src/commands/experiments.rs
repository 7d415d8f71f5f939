use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;

use anyhow::{Context, Result, anyhow, ensure};
use memcart::artifact::read_map_artifact;
use memcart::cartography::{
    Bounds, DEFAULT_MIN_REGION, DEFAULT_TOKEN_BUDGET, PerfMetric, grid_coordinates, nearest_removal_set,
    read_performance, read_removal_manifest, region_relevance, specialised_sample, write_removal_manifest,
    write_selection_manifest,
};
use memcart::corpus::text::whitespace_tokens;
use memcart::corpus::{BpeModel, FrequencyTable, Granularity, Side, bpe_apply, join_bpe};
use memcart::perturb::{
    BaseExample, DEFAULT_POSITIONS, ExternalTranslator, HallucinationReport, JudgeOptions, PerturbationManifest,
    Translator, build_insertion_vocab, evaluation_pool, judge_hallucinations, read_translations, run_harness,
};
use serde_json::json;

use super::{emit, fmt_opt, load_corpus, load_merges, read_lines, source_token_counts};
use crate::cli::{PerturbJudgeArgs, PerturbMakeArgs, RegionsPlanArgs, RegionsRankArgs, SampleArgs};
use crate::config::Config;
use crate::tsv::{read_id_text, read_ids};

fn lattice_steps(step: f64) -> u32 {
    (1.0 / step).round() as u32
}

pub fn regions_plan(cfg: &Config, a: RegionsPlanArgs) -> Result<()> {
    let mut r = cfg.section("regions_plan");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let tokens = source_token_counts(&r.path("source", a.source)?)?;
    ensure!(tokens.len() == map.len(), "source has {} lines, map has {} rows", tokens.len(), map.len());
    let step = r.value("step", a.step, 0.1)?;
    let budget = r.value("budget", a.budget, DEFAULT_TOKEN_BUDGET)?;
    let out_dir = r.path("out_dir", a.out_dir)?;
    fs::create_dir_all(&out_dir)?;
    let grid = grid_coordinates(step)?;
    let map_hash = map.content_hash();
    let mut summary = String::from("i\tj\tn\ttokens\tfile\n");
    for c in &grid {
        let set = nearest_removal_set(&map, *c, budget, &tokens)?;
        let name = format!("removal_{}_{}.tsv", c.a, c.b);
        write_removal_manifest(&set, &map_hash, &out_dir.join(&name))?;
        let _ = writeln!(summary, "{}\t{}\t{}\t{}\t{name}", c.i(), c.j(), set.ids.len(), set.total_source_tokens);
    }
    let plan = out_dir.join("plan.tsv");
    fs::write(&plan, &summary)?;
    r.stamp(&plan, json!({"map_hash": map_hash, "coordinates": grid.len()}))?;
    eprintln!("{} removal sets in {}", grid.len(), out_dir.display());
    Ok(())
}

pub fn regions_rank(cfg: &Config, a: RegionsRankArgs) -> Result<()> {
    let mut r = cfg.section("regions_rank");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let dir = r.path("manifests", a.manifests)?;
    let step = r.value("step", a.step, 0.1)?;
    let min_region = r.value("min_region", a.min_region, DEFAULT_MIN_REGION)?;
    let records = read_performance(&r.path("performance", a.performance)?, lattice_steps(step))?;
    let out = r.opt_path("out", a.out)?;

    let mut names: Vec<_> = fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("removal_") && n.ends_with(".tsv"))
        })
        .collect();
    names.sort();
    let map_hash = map.content_hash();
    let mut sets = Vec::with_capacity(names.len());
    for p in &names {
        let (set, hash) = read_removal_manifest(p)?;
        ensure!(hash == map_hash, "{} was planned on a different map", p.display());
        sets.push(set);
    }
    let grid = grid_coordinates(step)?;
    let report = region_relevance(&map, &grid, &sets, &records, min_region)?;

    let mut text = String::from("i\tj\tn_examples\tn_scored");
    for m in PerfMetric::ALL {
        let _ = write!(text, "\t{0}\t{0}_delta", m.name());
    }
    text.push('\n');
    for s in &report.regions {
        let _ = write!(text, "{}\t{}\t{}\t{}", s.coordinate.i(), s.coordinate.j(), s.n_examples, s.n_scored);
        for k in 0..3 {
            let _ = write!(text, "\t{}\t{}", fmt_opt(s.score[k]), fmt_opt(s.delta[k]));
        }
        text.push('\n');
    }
    emit(out.as_deref(), &text)?;
    for (k, m) in PerfMetric::ALL.iter().enumerate() {
        let show = |v: &[memcart::cartography::GridCoordinate]| v.iter().map(|c| format!("({c})")).collect::<Vec<_>>().join(" ");
        eprintln!("{}: most relevant {}", m.name(), show(&report.top[k]));
        eprintln!("{}: least relevant {}", m.name(), show(&report.bottom[k]));
    }
    eprintln!(
        "{} regions ranked, {} below {min_region} examples, {} examples never removed",
        report.regions.len(),
        report.excluded.len(),
        report.never_removed
    );
    if let Some(out) = &out {
        r.stamp(out, json!({"map_hash": map_hash, "runs": records.len()}))?;
    }
    Ok(())
}

pub fn sample(cfg: &Config, a: SampleArgs) -> Result<()> {
    let mut r = cfg.section("sample");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let tokens = source_token_counts(&r.path("source", a.source)?)?;
    let bounds = Bounds::parse(&r.required::<String>("bounds", a.bounds)?)?;
    let reference = r.required("reference_tokens", a.reference_tokens)?;
    let seed = r.value("seed", a.seed, 0)?;
    let out = r.path("out", a.out)?;
    let s = specialised_sample(&map, bounds, reference, &tokens, seed)?;
    let map_hash = map.content_hash();
    write_selection_manifest(&s, &map_hash, &out)?;
    r.stamp(&out, json!({"map_hash": map_hash, "ids": s.ids.len(), "tokens": s.total_tokens, "partial": s.partial}))?;
    if s.partial {
        eprintln!(
            "warning: region holds only {} tokens over {} examples, below the {reference} reference",
            s.total_tokens, s.n_candidates
        );
    }
    eprintln!("sampled {} examples, {} tokens", s.ids.len(), s.total_tokens);
    Ok(())
}

fn segment(model: Option<&BpeModel>, line: &str) -> Vec<String> {
    let ws = whitespace_tokens(line);
    match model {
        Some(m) => bpe_apply(m, &ws),
        None => ws,
    }
}

fn parse_slices(s: &str) -> Result<(usize, usize, usize)> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<Result<_, _>>()
        .context("--slices takes three comma-separated sizes")?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(anyhow!("--slices takes three comma-separated sizes")),
    }
}

pub fn perturb_make(cfg: &Config, a: PerturbMakeArgs) -> Result<()> {
    let mut r = cfg.section("perturb_make");
    let lines = read_lines(&r.path("source", a.corpus.source)?)?;
    let model = load_merges(&mut r, a.merges)?;
    let per_group = r.value("per_group", a.per_group, 500)?;
    let seed = r.value("seed", a.seed, 0)?;
    let positions = r.value("positions", a.positions, DEFAULT_POSITIONS)?;
    let slices = parse_slices(&r.value("slices", a.slices, "100,100,100".to_owned())?)?;
    let out = r.path("out", a.out)?;

    let segmented: Vec<Vec<String>> = lines.iter().map(|l| segment(model.as_ref(), l)).collect();
    let granularity = if model.is_some() { Granularity::Bpe } else { Granularity::Whitespace };
    let table = FrequencyTable::from_tokens(Side::Source, granularity, segmented.iter().flatten());
    let vocab = build_insertion_vocab(&table, slices);
    if vocab.shrunk {
        eprintln!("warning: only {} distinct tokens, insertion slices shrunk", table.distinct());
    }
    let groups: Vec<Vec<usize>> = if a.pool.is_empty() {
        vec![(0..lines.len()).collect()]
    } else {
        a.pool.iter().map(|p| read_ids(p)).collect::<Result<_>>()?
    };
    let mut sources = Vec::new();
    for id in evaluation_pool(&groups, per_group, seed) {
        let toks = segmented.get(id).ok_or_else(|| anyhow!("pool id {id} is outside the source file"))?;
        if toks.is_empty() {
            eprintln!("skipping empty source {id}");
            continue;
        }
        sources.push((id, toks.clone()));
    }
    let manifest = PerturbationManifest::build(&sources, &vocab, positions)?;
    manifest.write(&out)?;
    r.stamp(
        &out,
        json!({"hash": manifest.hash, "sources": sources.len(), "vocab": vocab.tokens.len(), "rows": manifest.rows.len()}),
    )?;
    eprintln!(
        "{} perturbed sources from {} bases, {} insertion tokens",
        manifest.rows.len(),
        sources.len(),
        vocab.tokens.len()
    );
    Ok(())
}

/// Rejoins BPE pieces in translator output before scoring.
struct Joined<'a>(&'a dyn Translator);

impl Translator for Joined<'_> {
    fn translate(&self, sources: &[Vec<String>]) -> memcart::Result<Vec<Vec<String>>> {
        Ok(self.0.translate(sources)?.iter().map(|t| join_bpe(t)).collect())
    }
}

fn report_text(report: &HallucinationReport) -> String {
    let mut text = String::from("base_id\tunperturbed_bleu\tevaluated\thallucinated\tflagged\n");
    for s in &report.sources {
        let _ = writeln!(
            text,
            "{}\t{:.4}\t{}\t{}\t{}",
            s.base_id, s.unperturbed_bleu, s.evaluated, s.hallucinated, s.flagged
        );
    }
    text
}

pub fn perturb_judge(cfg: &Config, a: PerturbJudgeArgs) -> Result<()> {
    let mut r = cfg.section("perturb_judge");
    let manifest = PerturbationManifest::read(&r.path("manifest", a.manifest)?)?;
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let no_gate = r.flag("no_gate", a.no_gate)?;
    let gate = r.value("gate_bleu", a.gate_bleu, memcart::perturb::HALLUCINATION_BLEU)?;
    let options = JudgeOptions {
        gate_bleu: (!no_gate).then_some(gate),
        against_hypothesis: r.flag("against_hypothesis", a.against_hypothesis)?,
    };
    let out = r.path("out", a.out)?;
    let base_ids: Vec<usize> = manifest.rows.iter().map(|row| row.base_id).collect::<BTreeSet<_>>().into_iter().collect();
    let pair = |id: usize| corpus.get(id).ok_or_else(|| anyhow!("manifest names example {id} beyond the corpus"));
    let mut references = Vec::with_capacity(base_ids.len());
    for &id in &base_ids {
        references.push(whitespace_tokens(&pair(id)?.target));
    }

    let report = match r.optional::<String>("translator", a.translator)? {
        Some(command) => {
            let model = load_merges(&mut r, a.merges)?;
            let work_dir = r.path("work_dir", a.work_dir)?;
            fs::create_dir_all(&work_dir)?;
            let ext = ExternalTranslator {
                command: command.split_whitespace().map(str::to_owned).collect(),
                work_dir,
                jobs: r.value("jobs", a.jobs, 1)?,
            };
            let mut bases = Vec::with_capacity(base_ids.len());
            for &id in &base_ids {
                bases.push((id, segment(model.as_ref(), &pair(id)?.source)));
            }
            run_harness(&manifest, &bases, &references, &Joined(&ext), options)?
        }
        None => {
            let translations: Vec<Vec<String>> =
                read_translations(&r.path("translations", a.translations)?, manifest.rows.len())?
                    .iter()
                    .map(|t| join_bpe(t))
                    .collect();
            let base_tr = read_id_text(&r.path("base_translations", a.base_translations)?)?;
            let mut bases = Vec::with_capacity(base_ids.len());
            for (&id, reference) in base_ids.iter().zip(references) {
                let t = base_tr
                    .get(&id)
                    .ok_or_else(|| anyhow!("no base translation for example {id}"))?;
                bases.push(BaseExample {
                    id,
                    reference,
                    translation: join_bpe(t),
                });
            }
            judge_hallucinations(&manifest, &translations, &bases, options)?
        }
    };
    fs::write(&out, report_text(&report))?;
    let mut triggers = String::from("base_id\ttoken\tposition\tbleu\n");
    for t in &report.triggers {
        let _ = writeln!(triggers, "{}\t{}\t{}\t{:.4}", t.base_id, t.token, t.position, t.bleu);
    }
    let mut tpath = out.as_os_str().to_owned();
    tpath.push(".triggers.tsv");
    fs::write(&tpath, triggers)?;
    r.stamp(
        &out,
        json!({"manifest_hash": manifest.hash, "ratio": report.ratio, "evaluated": report.n_evaluated, "flagged": report.n_flagged}),
    )?;
    println!(
        "hallucination_ratio\t{:.6}\tflagged={}\tevaluated={}",
        report.ratio, report.n_flagged, report.n_evaluated
    );
    Ok(())
}
