use anyhow::{Context, Result, bail, ensure};
use memcart::artifact::{read_map_artifact, write_map_artifact};
use memcart::cartography::{MapRow, MemorisationMap};
use memcart::corpus::text::whitespace_tokens;
use memcart::ensemble::{read_ensemble_log, read_membership_manifest, validate_logs};
use memcart::features::{FeatureContext, extract_all, ibm1_align, ingest_alignments, read_backtranslations};
use memcart::flags::Flags;
use memcart::hashing::derive_seed;
use memcart::metrics::{
    HypothesisSet, MemorisationRecord, Metric, Status, Variant, bleu_map_variant, ll_records, split_half_records,
    split_half_reliability,
};
use memcart::predictor::{
    InputMode, MlpConfig, MlpModel, N_OUTPUTS, evaluate_outputs, evaluate_predictor, input_row, predict as run_predict,
    train_mlp,
};
use memcart::signals::{build_series, read_epoch_log, signals_for_all};
use serde_json::json;

use super::{load_corpus, load_merges};
use crate::cli::{AssembleArgs, FeaturesArgs, MetricsArgs, PredictArgs, SignalsArgs, TrainPredictorArgs};
use crate::config::Config;
use crate::tsv::{read_features, read_signals, write_features, write_signals};

pub fn metrics(cfg: &Config, a: MetricsArgs) -> Result<()> {
    let mut r = cfg.section("metrics");
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let matrix = read_membership_manifest(&r.path("splits", a.splits)?)?;
    ensure!(
        matrix.n_examples() == corpus.len(),
        "splits cover {} examples, corpus has {}",
        matrix.n_examples(),
        corpus.len()
    );
    let variant: Variant = r
        .value("variant", a.variant, "ll".to_owned())?
        .parse()
        .map_err(anyhow::Error::msg)?;
    let reliability = r.flag("reliability", a.reliability)?;
    let out = r.path("out", a.out)?;
    let records = match variant {
        Variant::Ll => {
            let logs = read_ensemble_log(&r.path("scores", a.scores)?)?;
            let logs = validate_logs(&matrix, logs)?;
            if reliability {
                let (half_a, half_b) = split_half_records(&matrix, &logs);
                for m in Metric::ALL {
                    let rep = split_half_reliability(&half_a, &half_b, m, true)?;
                    println!("reliability\t{m}\tr={:.4}\tn={}\tskipped={}", rep.r, rep.n_used, rep.n_skipped);
                }
                let rep = split_half_reliability(&half_a, &half_b, Metric::Cm, false)?;
                println!("reliability\tcm_uncapped\tr={:.4}\tn={}", rep.r, rep.n_used);
            }
            ll_records(&matrix, &logs)
        }
        Variant::Bleu => {
            if reliability {
                bail!("--reliability needs the ll variant");
            }
            let path = r.path("hypotheses", a.hypotheses)?;
            let hyps = HypothesisSet::read(&path, matrix.n_seeds(), matrix.n_examples())?;
            let refs: Vec<Vec<String>> = (0..corpus.len())
                .filter_map(|i| corpus.get(i))
                .map(|p| whitespace_tokens(&p.target))
                .collect();
            bleu_map_variant(&matrix, &hyps, &refs)?
        }
    };
    let map = MemorisationMap::assemble(records, None, None, matrix.n_seeds(), &corpus.content_hash())?;
    let checksum = write_map_artifact(&map, &out)?;
    r.stamp(&out, json!({"checksum": checksum, "corpus_hash": map.corpus_hash, "valid": map.n_valid()}))?;
    eprintln!("{} of {} examples have metrics", map.n_valid(), map.len());
    Ok(())
}

pub fn features(cfg: &Config, a: FeaturesArgs) -> Result<()> {
    let mut r = cfg.section("features");
    let corpus = load_corpus(&mut r, &a.corpus)?;
    let Some(model) = load_merges(&mut r, a.merges)? else {
        bail!("missing --merges");
    };
    let out = r.path("out", a.out)?;
    let pairs = corpus.tokenize(&model);
    let alignments = match r.opt_path("alignments", a.alignments)? {
        Some(p) => ingest_alignments(&p, &pairs)?,
        None => {
            let iterations = r.value("ibm1_iterations", a.ibm1_iterations, 5)?;
            let (_, links) = ibm1_align(&pairs, iterations)?;
            links.into_iter().map(Some).collect()
        }
    };
    let backtranslations = r
        .opt_path("backtranslations", a.backtranslations)?
        .map(|p| read_backtranslations(&p, pairs.len()))
        .transpose()?;
    let ctx = FeatureContext::build(&pairs);
    let feats = extract_all(&pairs, &ctx, Some(&alignments), backtranslations.as_deref());
    let hash = corpus.content_hash();
    write_features(&out, &hash, &feats)?;
    let partial = feats.iter().filter(|f| !f.is_complete()).count();
    r.stamp(&out, json!({"corpus_hash": hash, "partial_rows": partial}))?;
    eprintln!("features for {} pairs, {partial} with nulls", feats.len());
    Ok(())
}

pub fn signals(cfg: &Config, a: SignalsArgs) -> Result<()> {
    let mut r = cfg.section("signals");
    let log = r.path("epoch_log", a.epoch_log)?;
    let out = r.path("out", a.out)?;
    let records = read_epoch_log(&log)?;
    let seen = records.iter().map(|e| e.example_id + 1).max().unwrap_or(0);
    let n = r.value("n_examples", a.n_examples, seen)?;
    let sig = signals_for_all(&build_series(&records, n)?)?;
    write_signals(&out, &sig)?;
    let missing = sig.iter().filter(|s| s.is_none()).count();
    r.stamp(&out, json!({"rows": n, "missing": missing}))?;
    eprintln!("signals for {} examples, {missing} without epoch rows", n - missing);
    Ok(())
}

pub fn assemble(cfg: &Config, a: AssembleArgs) -> Result<()> {
    let mut r = cfg.section("assemble");
    let base = read_map_artifact(&r.path("map", a.map)?)?;
    let out = r.path("out", a.out)?;
    let features = match r.opt_path("features", a.features)? {
        Some(p) => {
            let (hash, f) = read_features(&p)?;
            ensure!(
                hash == base.corpus_hash,
                "feature table was built on corpus {hash}, map is for {}",
                base.corpus_hash
            );
            f
        }
        None => base.rows().iter().map(|row| row.features.clone()).collect(),
    };
    let signals = match r.opt_path("signals", a.signals)? {
        Some(p) => read_signals(&p)?,
        None => base.rows().iter().map(|row| row.signals).collect(),
    };
    let records = base
        .rows()
        .iter()
        .map(|row| {
            let mut rec = row.record.clone();
            rec.flags.set(Flags::PARTIAL_FEATURES, false);
            rec.flags.set(Flags::HYP_FALLBACK, false);
            rec
        })
        .collect();
    let map = MemorisationMap::assemble(records, Some(features), Some(signals), base.n_seeds, &base.corpus_hash)?;
    let checksum = write_map_artifact(&map, &out)?;
    r.stamp(&out, json!({"checksum": checksum, "corpus_hash": map.corpus_hash}))?;
    Ok(())
}

fn targets_of(record: &MemorisationRecord) -> Option<[f64; N_OUTPUTS]> {
    record.metrics.map(|m| [m.tm, m.gs, m.cm])
}

fn print_evaluation(label: &str, evals: &[memcart::predictor::MetricEvaluation]) {
    for e in evals {
        let r = e.pearson_r.map_or_else(|| "NA".to_owned(), |r| format!("{r:.4}"));
        println!("{label}\t{}\tr={r}\tmae={:.4}", e.metric, e.mean_abs_diff);
    }
}

pub fn train_predictor(cfg: &Config, a: TrainPredictorArgs) -> Result<()> {
    let mut r = cfg.section("train_predictor");
    let map = read_map_artifact(&r.path("map", a.map)?)?;
    let mode: InputMode = r
        .value("mode", a.mode, "features".to_owned())?
        .parse()
        .map_err(anyhow::Error::msg)?;
    let hidden: String = r.value("hidden", a.hidden, "100,100".to_owned())?;
    let hidden: Vec<usize> = hidden
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .context("--hidden takes comma-separated widths")?;
    let defaults = MlpConfig::default();
    let seed = r.value("seed", a.seed, defaults.seed)?;
    let config = MlpConfig {
        hidden,
        learning_rate: r.value("learning_rate", a.learning_rate, defaults.learning_rate)?,
        alpha: r.value("l2", a.l2, defaults.alpha)?,
        max_batch: r.value("batch", a.batch, defaults.max_batch)?,
        epochs: r.value("epochs", a.epochs, defaults.epochs)?,
        seed,
        ..defaults
    };
    let holdout: f64 = r.value("holdout", a.holdout, 0.1)?;
    ensure!((0.0..1.0).contains(&holdout), "--holdout must lie in [0, 1)");
    let out = r.path("out", a.out)?;

    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for row in map.rows() {
        let (Some(x), Some(y)) = (input_row(&row.features, row.signals.as_ref(), mode), targets_of(&row.record)) else {
            dropped += 1;
            continue;
        };
        let draw = derive_seed("holdout", &[seed, row.id() as u64]) % 1_000_000;
        if (draw as f64) < holdout * 1_000_000.0 {
            test_x.push(x);
            test_y.push(y);
        } else {
            train_x.push(x);
            train_y.push(y);
        }
    }
    let (model, report) = train_mlp(&train_x, &train_y, mode, &config, &map.corpus_hash)?;
    model.save(&out)?;
    println!("trained\trows={}\tdropped={dropped}\theldout={}", train_x.len(), test_x.len());
    if let Some(loss) = report.epoch_losses.last() {
        println!("final_loss\t{loss:.6}");
    }
    if test_x.len() >= 3 {
        print_evaluation("heldout", &evaluate_predictor(&model, &test_x, &test_y)?);
    }
    r.stamp(&out, json!({"corpus_hash": map.corpus_hash, "train_rows": train_x.len(), "heldout_rows": test_x.len()}))?;
    Ok(())
}

fn predicted_row(source: &MapRow, variant: Variant, prediction: Option<&memcart::predictor::Prediction>) -> MapRow {
    let carried = source.record.flags & (Flags::PARTIAL_FEATURES | Flags::HYP_FALLBACK);
    let record = match prediction {
        Some(p) => {
            let mut flags = carried | Flags::PREDICTED;
            flags.set(Flags::CLAMPED, p.clamped);
            MemorisationRecord {
                example_id: source.id(),
                variant,
                status: Status::Ok,
                metrics: Some(p.metrics),
                n_train_models: 0,
                n_heldout_models: 0,
                flags,
            }
        }
        None => {
            let mut rec = MemorisationRecord::null(source.id(), variant, Status::MissingInputs);
            rec.flags = carried | Flags::PREDICTED;
            rec
        }
    };
    MapRow {
        record,
        features: source.features.clone(),
        signals: source.signals,
    }
}

pub fn predict(cfg: &Config, a: PredictArgs) -> Result<()> {
    let mut r = cfg.section("predict");
    let model = MlpModel::load(&r.path("model", a.model)?)?;
    let input = read_map_artifact(&r.path("map", a.map)?)?;
    let evaluate = r.flag("evaluate", a.evaluate)?;
    let out = r.path("out", a.out)?;
    if model.corpus_hash != input.corpus_hash {
        eprintln!("note: model was trained on corpus {}, predicting for {}", model.corpus_hash, input.corpus_hash);
    }
    let mut idx = Vec::new();
    let mut inputs = Vec::new();
    for (k, row) in input.rows().iter().enumerate() {
        if let Some(x) = input_row(&row.features, row.signals.as_ref(), model.input_mode) {
            idx.push(k);
            inputs.push(x);
        }
    }
    let preds = run_predict(&model, &inputs)?;
    let mut by_row = vec![None; input.len()];
    for (k, p) in idx.iter().zip(&preds) {
        by_row[*k] = Some(p);
    }
    if evaluate {
        let (raw, truth): (Vec<_>, Vec<_>) = idx
            .iter()
            .zip(&preds)
            .filter_map(|(&k, p)| Some((p.raw, targets_of(&input.rows()[k].record)?)))
            .unzip();
        ensure!(raw.len() >= 3, "fewer than 3 rows carry both predictions and metrics");
        print_evaluation("transfer", &evaluate_outputs(&raw, &truth));
    }
    let rows = input
        .rows()
        .iter()
        .zip(&by_row)
        .map(|(row, p)| predicted_row(row, input.variant, *p))
        .collect();
    let map = MemorisationMap::from_rows(input.variant, input.n_seeds, input.corpus_hash.clone(), rows)?;
    let checksum = write_map_artifact(&map, &out)?;
    let clamped = preds.iter().filter(|p| p.clamped).count();
    r.stamp(&out, json!({"checksum": checksum, "predicted": preds.len(), "clamped": clamped}))?;
    eprintln!("predicted {} of {} examples, {clamped} clamped", preds.len(), map.len());
    Ok(())
}
