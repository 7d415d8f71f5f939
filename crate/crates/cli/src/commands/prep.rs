use std::fs;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result, bail};
use memcart::corpus::text::whitespace_tokens;
use memcart::corpus::{bpe_apply as apply_bpe, bpe_learn as learn_bpe, filter_corpus, write_merges, write_rejection_report};
use memcart::ensemble::{
    ScorerBackend, SplitPlan, ToyScorer, UnigramModel, make_splits, read_membership_manifest, run_scorer,
    write_ensemble_log, write_membership_manifest,
};
use serde_json::json;

use super::{load_corpus, load_merges, read_lines};
use crate::cli::{BpeApplyArgs, BpeLearnArgs, FilterArgs, ScoreArgs, SplitsArgs};
use crate::config::Config;

pub fn filter(cfg: &Config, a: FilterArgs) -> Result<()> {
    let mut r = cfg.section("filter");
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let out_dir = r.path("out_dir", a.out_dir)?;
    fs::create_dir_all(&out_dir)?;
    let report = filter_corpus(&corpus);
    let mut src = String::new();
    let mut trg = String::new();
    let mut ids = String::new();
    for &id in &report.kept {
        let p = corpus.get(id).expect("kept id from this corpus");
        src.push_str(&p.source);
        src.push('\n');
        trg.push_str(&p.target);
        trg.push('\n');
        ids.push_str(&format!("{id}\n"));
    }
    fs::write(out_dir.join("kept.src"), src)?;
    fs::write(out_dir.join("kept.trg"), trg)?;
    let ids_path = out_dir.join("kept.ids");
    fs::write(&ids_path, ids)?;
    write_rejection_report(&report, &out_dir.join("rejections.tsv"))?;
    r.stamp(
        &ids_path,
        json!({"corpus_hash": corpus.content_hash(), "kept": report.kept.len(), "rejected": report.rejected}),
    )?;
    eprintln!("kept {} of {} pairs", report.kept.len(), report.total);
    Ok(())
}

pub fn bpe_learn(cfg: &Config, a: BpeLearnArgs) -> Result<()> {
    let mut r = cfg.section("bpe_learn");
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let vocab_size = r.value("vocab_size", a.vocab_size, 32_000)?;
    let out = r.path("out", a.out)?;
    let tokens = (0..corpus.len())
        .filter_map(|i| corpus.get(i))
        .flat_map(|p| whitespace_tokens(&p.source).into_iter().chain(whitespace_tokens(&p.target)));
    let model = learn_bpe(tokens, vocab_size)?;
    write_merges(&model, &out)?;
    r.stamp(&out, json!({"corpus_hash": corpus.content_hash(), "merges": model.merges().len()}))?;
    eprintln!("learned {} merges", model.merges().len());
    Ok(())
}

pub fn bpe_apply(cfg: &Config, a: BpeApplyArgs) -> Result<()> {
    let mut r = cfg.section("bpe_apply");
    let Some(model) = load_merges(&mut r, a.merges)? else {
        bail!("missing --merges");
    };
    let input = r.path("input", a.input)?;
    let out = r.path("out", a.out)?;
    let mut w = BufWriter::new(fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    for line in read_lines(&input)? {
        writeln!(w, "{}", apply_bpe(&model, &whitespace_tokens(&line)).join(" "))?;
    }
    w.flush()?;
    r.stamp(&out, json!({}))?;
    Ok(())
}

pub fn splits(cfg: &Config, a: SplitsArgs) -> Result<()> {
    let mut r = cfg.section("splits");
    let n = match r.optional("n_examples", a.n_examples)? {
        Some(n) => n,
        None => load_corpus(&mut r, &a.corpus)?.len(),
    };
    let seeds = r.value("seeds", a.seeds, 8)?;
    let master_seed = r.value("master_seed", a.master_seed, 0)?;
    let out = r.path("out", a.out)?;
    let matrix = make_splits(&SplitPlan::new(n, seeds, master_seed))?;
    write_membership_manifest(&matrix, &out)?;
    r.stamp(&out, json!({"membership_hash": matrix.content_hash()}))?;
    eprintln!("{seeds} splits over {n} examples");
    Ok(())
}

pub fn score(cfg: &Config, a: ScoreArgs) -> Result<()> {
    let mut r = cfg.section("score");
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let splits = r.path("splits", a.splits)?;
    let matrix = read_membership_manifest(&splits)?;
    let backend_name: String = r.value("backend", a.backend, "toy".to_owned())?;
    let out = r.path("out", a.out)?;
    let mut target_tokens = Vec::new();
    let backend = match backend_name.as_str() {
        "toy" => {
            let merges = load_merges(&mut r, a.merges)?;
            target_tokens = (0..corpus.len())
                .filter_map(|i| corpus.get(i))
                .map(|p| {
                    let ws = whitespace_tokens(&p.target);
                    match &merges {
                        Some(m) => apply_bpe(m, &ws),
                        None => ws,
                    }
                })
                .collect();
            let alpha = r.value("alpha", a.alpha, 0.5)?;
            let sigma = r.value("noise_sigma", a.noise_sigma, 0.1)?;
            let unigram = UnigramModel::from_tokens(target_tokens.iter().flatten());
            ScorerBackend::Builtin(ToyScorer::new(alpha, sigma, unigram)?)
        }
        "external" => {
            let command: String = r.required("command", a.command)?;
            let work_dir = r.path("work_dir", a.work_dir)?;
            fs::create_dir_all(&work_dir)?;
            ScorerBackend::External {
                command: command.split_whitespace().map(str::to_owned).collect(),
                work_dir,
                jobs: r.value("jobs", a.jobs, 1)?,
            }
        }
        other => bail!("unknown backend {other:?}, expected toy or external"),
    };
    let logs = run_scorer(&matrix, &corpus, &target_tokens, &backend)?;
    write_ensemble_log(&logs, &out)?;
    r.stamp(
        &out,
        json!({"corpus_hash": corpus.content_hash(), "membership_hash": matrix.content_hash(), "rows": logs.len()}),
    )?;
    eprintln!("scored {} cells", logs.len());
    Ok(())
}
