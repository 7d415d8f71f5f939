mod analyze;
mod experiments;
mod maps;
mod prep;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use memcart::corpus::{BpeModel, Corpus, load_parallel, read_merges, text::whitespace_tokens};

use crate::cli::{AnalyzeCommand, Cli, Command, CorpusArgs, PerturbCommand, RegionsCommand};
use crate::config::{Config, Resolver};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Filter(a) => prep::filter(&cfg, a),
        Command::BpeLearn(a) => prep::bpe_learn(&cfg, a),
        Command::BpeApply(a) => prep::bpe_apply(&cfg, a),
        Command::Splits(a) => prep::splits(&cfg, a),
        Command::Score(a) => prep::score(&cfg, a),
        Command::Metrics(a) => maps::metrics(&cfg, a),
        Command::Features(a) => maps::features(&cfg, a),
        Command::Signals(a) => maps::signals(&cfg, a),
        Command::Assemble(a) => maps::assemble(&cfg, a),
        Command::TrainPredictor(a) => maps::train_predictor(&cfg, a),
        Command::Predict(a) => maps::predict(&cfg, a),
        Command::Regions(RegionsCommand::Plan(a)) => experiments::regions_plan(&cfg, a),
        Command::Regions(RegionsCommand::Rank(a)) => experiments::regions_rank(&cfg, a),
        Command::Sample(a) => experiments::sample(&cfg, a),
        Command::Perturb(PerturbCommand::Make(a)) => experiments::perturb_make(&cfg, a),
        Command::Perturb(PerturbCommand::Judge(a)) => experiments::perturb_judge(&cfg, a),
        Command::Analyze(AnalyzeCommand::Corr(a)) => analyze::corr(&cfg, a),
        Command::Analyze(AnalyzeCommand::Compare(a)) => analyze::compare(&cfg, a),
        Command::Analyze(AnalyzeCommand::Trigrams(a)) => analyze::trigrams(&cfg, a),
        Command::Analyze(AnalyzeCommand::Buckets(a)) => analyze::buckets(&cfg, a),
        Command::Analyze(AnalyzeCommand::Centroids(a)) => analyze::centroids(&cfg, a),
        Command::Analyze(AnalyzeCommand::Trace(a)) => analyze::trace(&cfg, a),
        Command::Serve(a) => crate::service::serve_command(&cfg, a),
    }
}

pub fn load_corpus(r: &mut Resolver, c: &CorpusArgs) -> Result<Corpus> {
    let src = r.path("source", c.source.clone())?;
    let trg = r.path("target", c.target.clone())?;
    load_parallel(&src, &trg).with_context(|| format!("loading corpus {} / {}", src.display(), trg.display()))
}

pub(crate) fn load_merges(r: &mut Resolver, flag: Option<PathBuf>) -> Result<Option<BpeModel>> {
    r.opt_path("merges", flag)?
        .map(|p| read_merges(&p).with_context(|| format!("reading merges {}", p.display())))
        .transpose()
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub(crate) fn source_token_counts(path: &Path) -> Result<Vec<usize>> {
    Ok(read_lines(path)?.iter().map(|l| whitespace_tokens(l).len()).collect())
}

/// Writes to `out`, or stdout without one.
pub(crate) fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"))
}
