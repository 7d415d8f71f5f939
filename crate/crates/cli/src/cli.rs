use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Memorisation maps for parallel corpora.
///
/// Every option can also be set in the `--config` TOML file under a table
/// named after the verb (`[score]`, `[regions_plan]`, `[analyze_corr]`,
/// ...), using the option name with underscores. Flags win over the file.
#[derive(Debug, Parser)]
#[command(name = "memcart", version)]
pub struct Cli {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CorpusArgs {
    /// Source side, one sentence per line.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target side, line-aligned with the source.
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop pairs failing the length, ratio, copy or punctuation filters.
    Filter(FilterArgs),
    /// Learn a joint BPE vocabulary over both corpus sides.
    BpeLearn(BpeLearnArgs),
    /// Segment a whitespace-tokenized text file.
    BpeApply(BpeApplyArgs),
    /// Draw the per-seed 50/50 train splits.
    Splits(SplitsArgs),
    /// Score every (seed, example) cell.
    Score(ScoreArgs),
    /// Turn score logs or hypotheses into a TM/GS/CM map artifact.
    Metrics(MetricsArgs),
    /// Extract the 28 per-pair features.
    Features(FeaturesArgs),
    /// Extract training signals from an epoch log.
    Signals(SignalsArgs),
    /// Join a metrics artifact with feature and signal tables.
    Assemble(AssembleArgs),
    /// Fit the MLP that predicts TM/GS/CM.
    TrainPredictor(TrainPredictorArgs),
    /// Predict a map from features (and signals).
    Predict(PredictArgs),
    /// Grid regions: removal sets and relevance ranking.
    #[command(subcommand)]
    Regions(RegionsCommand),
    /// Random sample restricted to a map rectangle.
    Sample(SampleArgs),
    /// Hallucination harness.
    #[command(subcommand)]
    Perturb(PerturbCommand),
    /// Map analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// HTTP API over one map artifact.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Writes kept.src, kept.trg, kept.ids and rejections.tsv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BpeLearnArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BpeApplyArgs {
    #[arg(long)]
    pub merges: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Number of examples, when no corpus is given.
    #[arg(long)]
    pub n_examples: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// BPE merges for the built-in scorer; whitespace tokens without.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// `toy` or `external`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// External scorer command line, split on whitespace.
    #[arg(long)]
    pub command: Option<String>,
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// `ll` or `bleu`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Ensemble score log (ll variant).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// `seed<TAB>id<TAB>text` hypotheses (bleu variant).
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    /// Also report split-half reliability (ll variant).
    #[arg(long)]
    pub reliability: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Pharaoh alignments; IBM-1 is run when absent.
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    #[arg(long)]
    pub ibm1_iterations: Option<usize>,
    /// Line-aligned backtranslations of the target.
    #[arg(long)]
    pub backtranslations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SignalsArgs {
    #[arg(long)]
    pub epoch_log: Option<PathBuf>,
    #[arg(long)]
    pub n_examples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// Artifact written by `metrics`.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub signals: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPredictorArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// `features` or `features+signals`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of rows held out for evaluation.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Artifact supplying features and signals.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Also compare predictions with the map's own metrics.
    #[arg(long)]
    pub evaluate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RegionsCommand {
    /// One removal manifest per grid coordinate.
    Plan(RegionsPlanArgs),
    /// Rank regions from the runs trained without them.
    Rank(RegionsRankArgs),
}

#[derive(Debug, Args)]
pub struct RegionsPlanArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Whitespace source tokens per removal set.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionsRankArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Directory of removal manifests.
    #[arg(long)]
    pub manifests: Option<PathBuf>,
    #[arg(long)]
    pub performance: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub min_region: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// `tm_min,tm_max,gs_min,gs_max`.
    #[arg(long)]
    pub bounds: Option<String>,
    /// Whitespace source tokens to reach.
    #[arg(long)]
    pub reference_tokens: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PerturbCommand {
    /// Build the perturbation manifest.
    Make(PerturbMakeArgs),
    /// Judge translations of a manifest.
    Judge(PerturbJudgeArgs),
}

#[derive(Debug, Args)]
pub struct PerturbMakeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Segment sources (and the insertion vocabulary) with these merges.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Id files; each is one group of the evaluation pool.
    #[arg(long, num_args = 1..)]
    pub pool: Vec<PathBuf>,
    #[arg(long)]
    pub per_group: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub positions: Option<usize>,
    /// High, mid and low slice sizes, comma-separated.
    #[arg(long)]
    pub slices: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbJudgeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Merges used by `perturb make`, for the unperturbed sources.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Translations of the manifest rows, one per line.
    #[arg(long)]
    pub translations: Option<PathBuf>,
    /// `id<TAB>translation` for the unperturbed sources.
    #[arg(long)]
    pub base_translations: Option<PathBuf>,
    /// Translate both sides with this command instead of reading files.
    #[arg(long)]
    pub translator: Option<String>,
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub gate_bleu: Option<f64>,
    #[arg(long)]
    pub no_gate: bool,
    #[arg(long)]
    pub against_hypothesis: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Spearman correlations of features with metrics and each other.
    Corr(AnalyzeCorrArgs),
    /// Pearson r between two maps joined on source.
    Compare(AnalyzeCompareArgs),
    /// Trigram uniqueness per grid region.
    Trigrams(AnalyzeTrigramsArgs),
    /// Token probability shift per probability bucket.
    Buckets(AnalyzeBucketsArgs),
    /// Centroid of each labelled group.
    Centroids(AnalyzeCentroidsArgs),
    /// CM distribution of a set of examples.
    Trace(AnalyzeTraceArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeCorrArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeCompareArgs {
    #[arg(long)]
    pub map_a: Option<PathBuf>,
    #[arg(long)]
    pub map_b: Option<PathBuf>,
    /// Source files to join on; ids are joined directly without them.
    #[arg(long)]
    pub source_a: Option<PathBuf>,
    #[arg(long)]
    pub source_b: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeTrigramsArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Text side to count trigrams on, line-aligned with the map.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeBucketsArgs {
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub condition: Option<PathBuf>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeCentroidsArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeTraceArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Persist selections here so they survive restarts.
    #[arg(long)]
    pub selection_dir: Option<PathBuf>,
}
