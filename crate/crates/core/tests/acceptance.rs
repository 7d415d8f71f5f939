//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion to
//! the real stderr (bypassing the test harness capture) and fails if any
//! criterion outside `REPORT_ONLY` fails.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::time::Instant;

use memcart::artifact::{ArtifactHeader, MapReader, MapWriter, quantize};
use memcart::cartography::{
    GridCoordinate, MapRow, MemorisationMap, PerformanceRecord, RemovalSet, grid_coordinates, nearest_coordinate,
    nearest_removal_set, region_relevance,
};
use memcart::corpus::{Corpus, FrequencyTable, Granularity, Side, TokenizedPair};
use memcart::ensemble::{MembershipMatrix, ScoreLog, ScorerBackend, SplitPlan, ToyScorer, UnigramModel, make_splits, run_scorer};
use memcart::features::{
    AlignmentLinks, FEATURE_NAMES, FeatureContext, FeatureVector, N_FEATURES, edit_distance, extract_all,
    extract_features, feature_index, fuzzy_reordering,
};
use memcart::flags::Flags;
use memcart::metrics::{
    Metric, Metrics, MemorisationRecord, ModelScore, Status, Variant, aggregate_tm_gs_cm, geometric_mean_ll,
    ll_records, sentence_bleu, split_half_records, split_half_reliability,
};
use memcart::perturb::{
    DEFAULT_POSITIONS, DEFAULT_SLICE_SIZES, FnTranslator, JudgeOptions, PerturbationManifest, build_insertion_vocab,
    insertion_positions, run_harness,
};
use memcart::predictor::{InputMode, MlpConfig, Standardizer, evaluate_predictor, gradient_check, train_mlp};
use memcart::signals::TrainingSignals;
use memcart::stats::spearman;
use memcart::{Error, ExampleId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is reported but does not fail the test.
const REPORT_ONLY: &[&str] = &["reliability"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    // io::stderr() is not captured by libtest, eprintln! is
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

fn record(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    say(&format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
    out.push(Outcome { name, pass, detail });
}

// ---------------------------------------------------------------- metrics

/// Violations of `cm = max(0, tm - gs)` and the unit range on a map.
fn identity_violations(map: &MemorisationMap) -> usize {
    map.rows()
        .iter()
        .filter_map(|r| r.record.metrics)
        .filter(|m| {
            let unit = |x: f64| (0.0..=1.0).contains(&x);
            (m.cm - (m.tm - m.gs).max(0.0)).abs() > 1e-12 || !unit(m.tm) || !unit(m.gs) || !unit(m.cm)
        })
        .count()
}

/// Linear-space oracle for TM/GS from raw token probabilities per model.
fn ll_oracle(models: &[(bool, Vec<f64>)]) -> (f64, f64) {
    let gm = |p: &[f64]| p.iter().product::<f64>().powf(1.0 / p.len() as f64);
    let side = |train: bool| {
        let v: Vec<f64> = models.iter().filter(|m| m.0 == train).map(|m| gm(&m.1)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (side(true), side(false))
}

fn check_ll_oracle() -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for case in 0..1000 {
        let n_models = rng.random_range(2..=6);
        let models: Vec<(bool, Vec<f64>)> = (0..n_models)
            .map(|k| {
                let in_train = match k {
                    0 => true,
                    1 => false,
                    _ => rng.random_bool(0.5),
                };
                let len = rng.random_range(1..=8);
                (in_train, (0..len).map(|_| rng.random_range(1e-3..1.0)).collect())
            })
            .collect();
        let scores: Vec<ModelScore> = models
            .iter()
            .enumerate()
            .map(|(k, (in_train, p))| ModelScore {
                example_id: case,
                seed: k as u32,
                geometric_mean_prob: geometric_mean_ll(p).0,
                in_train: *in_train,
            })
            .collect();
        let rec = aggregate_tm_gs_cm(case, &scores, Variant::Ll, Flags::NONE);
        let (tm, gs) = ll_oracle(&models);
        let Some(m) = rec.metrics else {
            bad += 1;
            continue;
        };
        let err = [(m.tm - tm).abs(), (m.gs - gs).abs(), (m.cm - (tm - gs).max(0.0)).abs()]
            .into_iter()
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > 1e-9 {
            bad += 1;
        }
    }
    (bad, worst)
}

// ---------------------------------------------------------------- toy runs

struct ToyRun {
    matrix: MembershipMatrix,
    logs: Vec<ScoreLog>,
    map: MemorisationMap,
}

fn toy_run(corpus: &Corpus, targets: &[Vec<String>], k: usize, alpha: f64, sigma: f64) -> ToyRun {
    let matrix = make_splits(&SplitPlan::new(corpus.len(), k, 0)).unwrap();
    let unigram = UnigramModel::from_tokens(targets.iter().flatten());
    let backend = ScorerBackend::Builtin(ToyScorer::new(alpha, sigma, unigram).unwrap());
    let logs = run_scorer(&matrix, corpus, targets, &backend).unwrap();
    let records = ll_records(&matrix, &logs);
    let map = MemorisationMap::assemble(records, None, None, k, &corpus.content_hash()).unwrap();
    ToyRun { matrix, logs, map }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn unique_target_corpus(n: usize) -> (Corpus, Vec<Vec<String>>) {
    let pairs: Vec<(String, String)> = (0..n)
        .map(|i| (format!("s{i} the source"), format!("w{i} v{} u{}", i % 97, i % 13)))
        .collect();
    let targets = pairs.iter().map(|(_, t)| toks(t)).collect();
    (Corpus::from_pairs(pairs), targets)
}

/// Closed-form noise-free toy scores: every train model gives the mixture
/// probability, every held-out model the unigram part.
fn toy_oracle(targets: &[Vec<String>], alpha: f64) -> Vec<(f64, f64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut total = 0u64;
    for t in targets.iter().flatten() {
        *counts.entry(t).or_default() += 1;
        total += 1;
    }
    let denom = (total + counts.len() as u64) as f64;
    targets
        .iter()
        .map(|t| {
            let p: Vec<f64> = t.iter().map(|w| (counts[w.as_str()] + 1) as f64 / denom).collect();
            let l = p.len() as f64;
            let tm = p.iter().map(|x| alpha + (1.0 - alpha) * x).product::<f64>().powf(1.0 / l);
            let gs = p.iter().map(|x| (1.0 - alpha) * x).product::<f64>().powf(1.0 / l);
            (tm, gs)
        })
        .collect()
}

fn oracle_error(map: &MemorisationMap, oracle: &[(f64, f64)]) -> f64 {
    map.rows()
        .iter()
        .filter_map(|r| r.record.metrics.map(|m| (m, oracle[r.id()])))
        .map(|(m, (tm, gs))| (m.tm - tm).abs().max((m.gs - gs).abs()).max((m.cm - (tm - gs).max(0.0)).abs()))
        .fold(0.0, f64::max)
}

fn directional_corpus(n: usize) -> (Corpus, Vec<Vec<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let common: Vec<String> = (0..30).map(|k| format!("c{k}")).collect();
    let pairs: Vec<(String, String)> = (0..n)
        .map(|i| {
            let mut t: Vec<String> = (0..4).map(|_| common[rng.random_range(0..common.len())].clone()).collect();
            if i % 10 == 0 {
                t.insert(2, format!("rare{i}"));
            }
            (format!("s{i} x{}", i % 50), t.join(" "))
        })
        .collect();
    let targets = pairs.iter().map(|(_, t)| toks(t)).collect();
    (Corpus::from_pairs(pairs), targets)
}

// ---------------------------------------------------------------- features

fn tp(id: usize, src_ws: &str, src_bpe: &str, trg_ws: &str, trg_bpe: &str) -> TokenizedPair {
    TokenizedPair {
        pair_id: id,
        src_ws: toks(src_ws),
        trg_ws: toks(trg_ws),
        src_bpe: toks(src_bpe),
        trg_bpe: toks(trg_bpe),
    }
}

fn golden_mismatches() -> Vec<String> {
    let pairs = vec![
        tp(0, "the cat sat", "the c@@ at s@@ at", "de kat zat", "de k@@ at z@@ at"),
        tp(1, "the dog , 1999", "the dog , 19@@ 99", "de hond , 1999", "de hond , 19@@ 99"),
        tp(2, "cat", "c@@ at", "de kat zat", "de k@@ at z@@ at"),
    ];
    let ctx = FeatureContext::build(&pairs);
    let aligns = [
        AlignmentLinks::new(0, [(0, 0), (1, 1), (2, 2)]),
        AlignmentLinks::new(1, [(0, 0), (1, 1), (3, 3)]),
        AlignmentLinks::new(2, [(0, 1)]),
    ];
    let bts = [Some(toks("the cat sits")), None, Some(toks("the cat"))];
    let (l2, l3) = (2f64.ln(), 3f64.ln());
    let s = Some;
    #[rustfmt::skip]
    let want: [[Option<f64>; N_FEATURES]; 3] = [
        [s(3.0), s(5.0), s(3.0), s(5.0), s(1.0), s(1.0),
         s(2.0 * l2 / 3.0), s((2.0 * l2 + 2.0 * l3) / 5.0), s((l3 + 2.0 * l2) / 3.0), s((l3 + 6.0 * l2) / 5.0),
         s(0.0), s(0.0), s(l2), s(l2),
         s(2.0), s(0.4), s(0.4), s(0.0), s(0.0), s(3.0), s(1.0), s(0.0), s(0.0),
         s(0.0), s(0.0), s(1.0), s(0.4), s(0.0)],
        [s(4.0), s(5.0), s(4.0), s(5.0), s(1.0), s(1.0),
         s(l2 / 4.0), s(l2 / 5.0), s(l3 / 4.0), s(l3 / 5.0),
         s(0.0), s(0.0), s(0.0), s(0.0),
         s(1.0), s(0.2), s(0.2), s(0.25), s(0.25), s(2.0), None, s(0.0), s(0.0),
         s(0.25), s(0.25), s(0.5), s(0.6), s(1.0 / 3.0)],
        [s(1.0), s(2.0), s(3.0), s(5.0), s(1.0 / 3.0), s(0.4),
         s(l2), s((l2 + l3) / 2.0), s((l3 + 2.0 * l2) / 3.0), s((l3 + 6.0 * l2) / 5.0),
         s(l2), s(l2), s(l2), s(l2),
         s(2.0), s(0.5), s(0.4), s(0.0), s(0.0), s(3.0), s(1.0), s(-2.0), s(-3.0),
         s(0.0), s(2.0 / 3.0), s(1.0), s(0.5), s(0.0)],
    ];
    let mut bad = Vec::new();
    for (k, w) in want.iter().enumerate() {
        let got = extract_features(&pairs[k], &ctx, Some(&aligns[k]), bts[k].as_deref());
        for (i, wi) in w.iter().enumerate() {
            let ok = match (got.get(i), wi) {
                (Some(g), Some(w)) => (g - w).abs() <= 1e-12,
                (g, w) => g == *w,
            };
            if !ok {
                bad.push(format!("pair {k} {}: {:?} vs {:?}", FEATURE_NAMES[i], got.get(i), wi));
            }
        }
    }
    bad
}

fn frs(sigma: &[usize]) -> f64 {
    let links = AlignmentLinks::new(0, sigma.iter().enumerate().map(|(t, &s)| (s, t)));
    fuzzy_reordering(&links, sigma.len())
}

/// Full-matrix Levenshtein distance.
fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn edit_distance_violations() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.random_range(0..12)).map(|_| rng.random_range(0..4)).collect() };
    let mut bad = 0;
    for _ in 0..1000 {
        let (a, b, c) = (seq(&mut rng), seq(&mut rng), seq(&mut rng));
        let ab = edit_distance(&a, &b);
        let ok = ab == edit_distance(&b, &a)
            && ab == levenshtein(&a, &b)
            && edit_distance(&a, &c) <= ab + edit_distance(&b, &c)
            && edit_distance(&a, &a) == 0;
        bad += usize::from(!ok);
    }
    bad
}

// ---------------------------------------------------------------- bleu

/// Plain 4-gram BLEU with brevity penalty and add-one smoothing for the
/// higher orders when they have no match.
fn bleu_oracle(h: &[&str], r: &[&str]) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let grams = |s: &[&str], n: usize| -> HashMap<Vec<String>, usize> {
        let mut m = HashMap::new();
        for w in s.windows(n) {
            *m.entry(w.iter().map(|x| x.to_string()).collect()).or_insert(0) += 1;
        }
        m
    };
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (hg, rg) = (grams(h, n), grams(r, n));
        let matched: usize = hg.iter().map(|(g, c)| (*c).min(*rg.get(g).unwrap_or(&0))).sum();
        let total = h.len().saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_p += p.ln() / 4.0;
    }
    let bp = if h.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    100.0 * bp * log_p.exp()
}

// ---------------------------------------------------------------- predictor

fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(0.0..1.0) * (1.0 + j as f64 * 10.0)).collect())
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn nonlinear_targets(xs: &[Vec<f64>]) -> Vec<[f64; 3]> {
    let st = Standardizer::fit(xs);
    let blends = [
        [1.5, -1.0, 0.5, 0.8, -0.6],
        [-0.7, 1.2, 0.9, -0.4, 0.3],
        [0.4, 0.6, -1.3, 1.0, 0.9],
    ];
    xs.iter()
        .map(|x| {
            let z = st.transform(x);
            std::array::from_fn(|k| sigmoid(blends[k].iter().zip(&z).map(|(w, v)| w * v).sum()))
        })
        .collect()
}

// ---------------------------------------------------------------- artifact

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn unit(id: usize, k: u64) -> f64 {
    (splitmix(id as u64 * 64 + k) >> 11) as f64 / (1u64 << 53) as f64
}

/// Row `id` of the synthetic map, already at artifact precision.
fn synthetic_row(id: ExampleId) -> MapRow {
    let mut flags = if id % 11 == 0 { Flags::FLOORED } else { Flags::NONE };
    let record = if id % 97 == 0 {
        MemorisationRecord {
            n_train_models: 4,
            flags,
            ..MemorisationRecord::null(id, Variant::Ll, Status::EmptyHeldout)
        }
    } else {
        MemorisationRecord {
            example_id: id,
            variant: Variant::Ll,
            status: Status::Ok,
            metrics: Some(Metrics::new(quantize(unit(id, 0)), quantize(unit(id, 1)))),
            n_train_models: 4,
            n_heldout_models: 4,
            flags,
        }
    };
    let mut features = FeatureVector::from_options(std::array::from_fn(|i| Some(quantize(unit(id, 2 + i as u64) * 50.0))));
    if id % 13 == 0 {
        features.set(20, None);
        flags |= Flags::PARTIAL_FEATURES;
    }
    let signals = (id % 3 != 0).then(|| TrainingSignals {
        confidence: quantize(unit(id, 40)),
        variability: (id % 7 != 0).then(|| quantize(unit(id, 41))),
        final_likelihood: quantize(unit(id, 42)),
        forgetting: (id % 7 != 0).then(|| quantize(unit(id, 43) * 3.0)),
        hyp_likelihood: quantize(unit(id, 44)),
        final_minus_confidence: quantize(unit(id, 45) - 0.5),
        flags: Flags::NONE,
    });
    MapRow {
        record: MemorisationRecord { flags, ..record },
        features,
        signals,
    }
}

fn vm_hwm_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

struct ArtifactResult {
    lossless: bool,
    rows: usize,
    peak_delta_kib: Option<u64>,
    tamper_detected: bool,
    detail: String,
}

fn artifact_round_trip(dir: &Path, n: usize) -> ArtifactResult {
    // reset the peak-RSS counter so the delta covers this step only
    let _ = fs::write("/proc/self/clear_refs", "5");
    let before = vm_hwm_kib();
    let start = Instant::now();
    let path = dir.join("big.map");
    let header = ArtifactHeader {
        variant: Variant::Ll,
        n_seeds: 8,
        corpus_hash: "synthetic".into(),
        n_rows: n,
    };
    let mut w = MapWriter::new(BufWriter::with_capacity(1 << 20, File::create(&path).unwrap()), header.clone()).unwrap();
    for id in 0..n {
        w.write_row(&synthetic_row(id)).unwrap();
    }
    w.finish().unwrap();
    let write_secs = start.elapsed().as_secs_f64();

    let reader = MapReader::open(&path).unwrap();
    let mut lossless = reader.header == header;
    let mut rows = 0;
    let mut identity_bad = 0;
    for (id, row) in reader.enumerate() {
        let row = row.unwrap();
        if let Some(m) = row.record.metrics {
            identity_bad += usize::from((m.cm - (m.tm - m.gs).max(0.0)).abs() > 1e-12);
        }
        lossless &= row == synthetic_row(id);
        rows += 1;
    }
    lossless &= rows == n && identity_bad == 0;
    let peak_delta_kib = before.zip(vm_hwm_kib()).map(|(b, a)| a.saturating_sub(b));
    let size = fs::metadata(&path).unwrap().len();

    // flip a mantissa digit of a feature in the last row
    let mut f = OpenOptions::new().read(true).write(true).open(&path).unwrap();
    let tail_len = 8192.min(size);
    f.seek(SeekFrom::Start(size - tail_len)).unwrap();
    let mut tail = vec![0u8; tail_len as usize];
    f.read_exact(&mut tail).unwrap();
    let text = String::from_utf8_lossy(&tail).into_owned();
    let rows_end = text.rfind("\n#").unwrap();
    let last_start = text[..rows_end].rfind('\n').unwrap() + 1;
    let feature_col = 8 + 3;
    let field_start = last_start
        + text[last_start..rows_end]
            .split('\t')
            .take(feature_col)
            .map(|s| s.len() + 1)
            .sum::<usize>();
    let digit_at = field_start + 2; // "d.dddd..." -> first decimal
    let old = tail[digit_at];
    let new = if old == b'5' { b'6' } else { b'5' };
    f.seek(SeekFrom::Start(size - tail_len + digit_at as u64)).unwrap();
    f.write_all(&[new]).unwrap();
    drop(f);
    let tampered = MapReader::open(&path).unwrap().find_map(Result::err);
    let tamper_detected = matches!(tampered, Some(Error::ChecksumMismatch { .. }));
    fs::remove_file(&path).unwrap();

    ArtifactResult {
        lossless,
        rows,
        peak_delta_kib,
        tamper_detected,
        detail: format!(
            "{rows} rows, {:.0} MB on disk, write {write_secs:.1}s, total {:.1}s",
            size as f64 / 1e6,
            start.elapsed().as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------- regions

fn sample_map(points: &[(f64, f64)]) -> MemorisationMap {
    let records = points
        .iter()
        .enumerate()
        .map(|(i, &(tm, gs))| MemorisationRecord {
            example_id: i,
            variant: Variant::Ll,
            status: Status::Ok,
            metrics: Some(Metrics::new(tm, gs)),
            n_train_models: 4,
            n_heldout_models: 4,
            flags: Flags::NONE,
        })
        .collect();
    MemorisationMap::assemble(records, None, None, 8, "regions").unwrap()
}

/// Budget and maximality of every nearest-first removal set on a map whose
/// corpus is larger than the budget.
fn removal_set_violations() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n = 40_000;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let tm: f64 = rng.random_range(0.0..1.0);
            (tm, rng.random_range(0.0..1.0) * tm)
        })
        .collect();
    let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(1..=60)).collect();
    let map = sample_map(&pts);
    let budget = 750_000;
    let mut bad = 0;
    let grid = grid_coordinates(0.1).unwrap();
    for &c in &grid {
        let set = nearest_removal_set(&map, c, budget, &tokens).unwrap();
        let total: usize = set.ids.iter().map(|&i| tokens[i]).sum();
        let mut order: Vec<usize> = (0..n).collect();
        let d = |i: usize| (pts[i].0 - c.i()).powi(2) + (pts[i].1 - c.j()).powi(2);
        order.sort_by(|&x, &y| d(x).total_cmp(&d(y)).then(x.cmp(&y)));
        let k = set.ids.len();
        let prefix = order[..k] == set.ids[..];
        let maximal = k == n || total + tokens[order[k]] > budget;
        bad += usize::from(!(total <= budget && total == set.total_source_tokens && prefix && maximal));
    }
    (bad, grid.len())
}

fn perf(run: String, c: GridCoordinate, rng: &mut ChaCha8Rng) -> PerformanceRecord {
    // dyadic values keep every sum exact, so the oracle can be compared bit for bit
    PerformanceRecord {
        run_id: run,
        coordinate: Some(c),
        seed: 0,
        bleu_dev: rng.random_range(80..240) as f64 / 8.0,
        mean_logprob: -(rng.random_range(8..24) as f64) / 8.0,
        hallucination_ratio: rng.random_range(0..32) as f64 / 128.0,
    }
}

fn exclusion_ok() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let grid = grid_coordinates(0.1).unwrap();
    let sizes = [((9, 1), 2500), ((5, 5), 1999), ((7, 3), 2000)];
    let mut pts = Vec::new();
    for &((a, b), count) in &sizes {
        pts.extend(std::iter::repeat_n((a as f64 / 10.0, b as f64 / 10.0), count));
    }
    let map = sample_map(&pts);
    let tokens = vec![1; pts.len()];
    let coords: Vec<GridCoordinate> = sizes.iter().map(|&((a, b), _)| GridCoordinate { a, b, n: 10 }).collect();
    let sets: Vec<RemovalSet> = coords.iter().map(|&c| nearest_removal_set(&map, c, 2500, &tokens).unwrap()).collect();
    let recs: Vec<PerformanceRecord> = coords.iter().map(|&c| perf(format!("{c}"), c, &mut rng)).collect();
    let rep = region_relevance(&map, &grid, &sets, &recs, 2000).unwrap();
    let kept: Vec<GridCoordinate> = rep.regions.iter().map(|r| r.coordinate).collect();
    let mut want_kept = vec![coords[0], coords[2]];
    want_kept.sort();
    let small_excluded = rep.excluded.contains(&(coords[1], 1999));
    let ok = kept == want_kept && small_excluded && rep.excluded.len() == grid.len() - 2;
    (ok, format!("kept {} regions, excluded {}", kept.len(), rep.excluded.len()))
}

fn three_region_oracle_mismatches() -> usize {
    let grid = grid_coordinates(0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centres = [(0.5, 0.5), (1.0, 0.5), (1.0, 1.0)];
    let pts: Vec<(f64, f64)> = (0..300)
        .map(|i| {
            let (x, y) = centres[i % 3];
            (x - rng.random_range(0.0..0.2), y - rng.random_range(0.0..0.2))
        })
        .collect();
    let map = sample_map(&pts);
    let tokens: Vec<usize> = (0..300).map(|_| rng.random_range(1..20)).collect();
    let sets: Vec<RemovalSet> = grid.iter().map(|&c| nearest_removal_set(&map, c, 1500, &tokens).unwrap()).collect();
    let mut recs = Vec::new();
    for (k, &c) in grid.iter().enumerate() {
        for seed in 0..3 {
            recs.push(perf(format!("{k}-{seed}"), c, &mut rng));
        }
    }
    let rep = region_relevance(&map, &grid, &sets, &recs, 50).unwrap();

    let metric = |r: &PerformanceRecord, m: usize| [r.bleu_dev, r.mean_logprob, r.hallucination_ratio][m];
    let mut mismatches = 0;
    for m in 0..3 {
        let baseline = recs.iter().map(|r| metric(r, m)).sum::<f64>() / recs.len() as f64;
        mismatches += usize::from(rep.baseline[m] != baseline);
        let mut oracle: Vec<(f64, GridCoordinate)> = Vec::new();
        for (g, &c) in grid.iter().enumerate() {
            let mut impacts = Vec::new();
            for (id, &(tm, gs)) in pts.iter().enumerate() {
                if nearest_coordinate(&grid, tm, gs) != g {
                    continue;
                }
                let runs: Vec<f64> = recs
                    .iter()
                    .filter(|r| sets.iter().any(|s| Some(s.coordinate) == r.coordinate && s.ids.contains(&id)))
                    .map(|r| metric(r, m))
                    .collect();
                if !runs.is_empty() {
                    impacts.push(runs.iter().sum::<f64>() / runs.len() as f64);
                }
            }
            let score = impacts.iter().sum::<f64>() / impacts.len() as f64;
            let stat = rep.regions.iter().find(|r| r.coordinate == c);
            match stat {
                Some(s) if s.score[m] == Some(score) && s.delta[m] == Some(score - baseline) => {}
                _ => mismatches += 1,
            }
            let sign = if m == 2 { 1.0 } else { -1.0 };
            oracle.push((sign * (score - baseline), c));
        }
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let ranking: Vec<GridCoordinate> = oracle.into_iter().map(|(_, c)| c).collect();
        mismatches += usize::from(rep.top[m] != ranking);
    }
    mismatches
}

// ---------------------------------------------------------------- harness

/// Stub: copies the source unless it contains the skull token and has more
/// than seven tokens, in which case it emits unrelated output.
fn stub(src: &[String]) -> Vec<String> {
    if src.len() > 7 && src.iter().any(|t| t == "☠") {
        toks("zz yy xx ww")
    } else {
        src.to_vec()
    }
}

struct HarnessResult {
    ratio: f64,
    expected: f64,
    vocab: usize,
    counts_ok: bool,
    positions: usize,
}

fn harness() -> HarnessResult {
    let mut tokens: Vec<String> = Vec::new();
    for k in 0..299 {
        tokens.extend(std::iter::repeat_n(format!("t{k}"), 1 + k % 17));
    }
    tokens.extend(std::iter::repeat_n("☠".to_owned(), 5));
    let table = FrequencyTable::from_tokens(Side::Source, Granularity::Whitespace, &tokens);
    let vocab = build_insertion_vocab(&table, DEFAULT_SLICE_SIZES);

    // lengths 6..=9; every fifth source has an unrelated reference and is gated out
    let base: Vec<(ExampleId, Vec<String>)> = (0..40)
        .map(|i| (i, (0..6 + i % 4).map(|k| format!("t{}", (i * 7 + k) % 299)).collect()))
        .collect();
    let references: Vec<Vec<String>> = base
        .iter()
        .map(|(i, s)| if i % 5 == 0 { toks("qq rr ss tt") } else { s.clone() })
        .collect();
    let manifest = PerturbationManifest::build(&base, &vocab, DEFAULT_POSITIONS).unwrap();
    let report = run_harness(&manifest, &base, &references, &FnTranslator(stub), JudgeOptions::default()).unwrap();

    let evaluated: Vec<&(ExampleId, Vec<String>)> = base.iter().filter(|(i, _)| i % 5 != 0).collect();
    // one inserted token; the stub fires once the perturbed source exceeds seven tokens
    let flagged = evaluated.iter().filter(|(_, s)| s.len() + 1 > 7).count();
    let expected = flagged as f64 / evaluated.len() as f64;

    let mut per_base: HashMap<ExampleId, usize> = HashMap::new();
    for r in &manifest.rows {
        *per_base.entry(r.base_id).or_default() += 1;
    }
    let counts_ok = base.iter().all(|(i, s)| {
        let p = insertion_positions(s.len(), DEFAULT_POSITIONS).len();
        p == DEFAULT_POSITIONS && per_base[i] == vocab.tokens.len() * p
    });
    HarnessResult {
        ratio: report.ratio,
        expected,
        vocab: vocab.tokens.len(),
        counts_ok,
        positions: DEFAULT_POSITIONS,
    }
}

// ---------------------------------------------------------------- driver

#[test]
fn acceptance() {
    let mut out = Vec::new();
    let mut identity_maps: Vec<(String, usize)> = Vec::new();

    // streaming first, while the process peak is still small
    let dir = tempfile::tempdir().unwrap();
    let art = artifact_round_trip(dir.path(), 1_000_000);

    // -- metric identity (maps from the toy runs below are added later)
    let (ll_bad, ll_worst) = check_ll_oracle();

    // -- memoriser sanity
    let start = Instant::now();
    let (corpus, targets) = unique_target_corpus(2000);
    let high = toy_run(&corpus, &targets, 8, 0.9, 0.0);
    let zero = toy_run(&corpus, &targets, 8, 0.0, 0.0);
    let valid_high: Vec<Metrics> = high.map.rows().iter().filter_map(|r| r.record.metrics).collect();
    let valid_zero: Vec<Metrics> = zero.map.rows().iter().filter_map(|r| r.record.metrics).collect();
    let share = valid_high.iter().filter(|m| m.cm > 0.5).count() as f64 / valid_high.len() as f64;
    let zero_max = valid_zero.iter().map(|m| m.cm).fold(0.0, f64::max);
    let err_high = oracle_error(&high.map, &toy_oracle(&targets, 0.9));
    let err_zero = oracle_error(&zero.map, &toy_oracle(&targets, 0.0));
    let sanity_secs = start.elapsed().as_secs_f64();
    identity_maps.push(("toy a=0.9".into(), identity_violations(&high.map)));
    identity_maps.push(("toy a=0".into(), identity_violations(&zero.map)));

    // -- reliability
    let noisy = toy_run(&corpus, &targets, 8, 0.9, 0.1);
    identity_maps.push(("toy a=0.9 sigma=0.1".into(), identity_violations(&noisy.map)));
    let (half_a, half_b) = split_half_records(&noisy.matrix, &noisy.logs);
    let rel: Vec<_> = [Metric::Tm, Metric::Gs, Metric::Cm]
        .iter()
        .map(|&m| split_half_reliability(&half_a, &half_b, m, true).unwrap())
        .collect();

    // -- directional correlation
    let (dcorpus, dtargets) = directional_corpus(2000);
    let pairs: Vec<TokenizedPair> = (0..dcorpus.len())
        .map(|i| {
            let p = dcorpus.get(i).unwrap();
            let (s, t) = (toks(&p.source), toks(&p.target));
            TokenizedPair {
                pair_id: i,
                src_ws: s.clone(),
                trg_ws: t.clone(),
                src_bpe: s,
                trg_bpe: t,
            }
        })
        .collect();
    let feats = extract_all(&pairs, &FeatureContext::build(&pairs), None, None);
    let fi = feature_index("min_logfreq_trg_ws").unwrap();
    let mut rho_at = |sigma: f64| {
        let run = toy_run(&dcorpus, &dtargets, 8, 0.5, sigma);
        identity_maps.push((format!("directional sigma={sigma}"), identity_violations(&run.map)));
        let (xs, ys): (Vec<f64>, Vec<f64>) = run
            .map
            .rows()
            .iter()
            .filter_map(|r| Some((feats[r.id()].get(fi)?, r.record.metrics?.cm)))
            .unzip();
        (spearman(&xs, &ys).unwrap(), xs.len())
    };
    let (rho, n_rho) = rho_at(0.0);
    let (rho_noisy, _) = rho_at(0.1);

    let identity_bad: usize = identity_maps.iter().map(|(_, n)| n).sum();
    record(
        &mut out,
        "metric_identity",
        identity_bad == 0 && ll_bad == 0,
        format!(
            "{} maps + 1M-row artifact, {identity_bad} identity violations; LL oracle 1000 cases, {ll_bad} beyond 1e-9 (worst {ll_worst:.2e})",
            identity_maps.len()
        ),
    );
    record(
        &mut out,
        "memoriser_sanity",
        share >= 0.95 && zero_max < 0.05 && err_high <= 1e-9 && err_zero <= 1e-9 && sanity_secs < 120.0,
        format!(
            "alpha=0.9: {:.1}% of {} valid have cm>0.5; alpha=0: max cm {zero_max:.2e}; closed-form error {:.1e}/{:.1e}; {sanity_secs:.1}s",
            share * 100.0,
            valid_high.len(),
            err_high,
            err_zero
        ),
    );
    record(
        &mut out,
        "reliability",
        rel[2].r > 0.9,
        format!(
            "split-half r: cm {:.3} (need > 0.9), tm {:.3}, gs {:.3} over {} examples",
            rel[2].r, rel[0].r, rel[1].r, rel[2].n_used
        ),
    );
    record(
        &mut out,
        "directional_correlation",
        rho < 0.0,
        format!("spearman(min_logfreq_trg_ws, cm) = {rho:.3} noise-free, {rho_noisy:.3} at sigma=0.1, over {n_rho} examples"),
    );

    // -- grid and budgets
    let grid = grid_coordinates(0.1).unwrap();
    let grid_ok = grid.len() == 55 && grid.iter().all(|c| c.b <= c.a);
    let (set_bad, n_sets) = removal_set_violations();
    let (excl_ok, excl_detail) = exclusion_ok();
    let oracle_bad = three_region_oracle_mismatches();
    record(
        &mut out,
        "grid_and_budgets",
        grid_ok && set_bad == 0 && excl_ok && oracle_bad == 0,
        format!(
            "{} coordinates; {set_bad}/{n_sets} removal sets over budget or not maximal; threshold: {excl_detail}; 3-region oracle mismatches {oracle_bad}",
            grid.len()
        ),
    );

    // -- features
    let golden = golden_mismatches();
    let frs_vals = [frs(&[0, 1, 2, 3]), frs(&[3, 2, 1, 0]), frs(&[0, 1, 3, 2])];
    let frs_ok = frs_vals[0] == 1.0 && frs_vals[1] == 0.0 && (frs_vals[2] - 1.0 / 3.0).abs() < 1e-15;
    let ed_bad = edit_distance_violations();
    record(
        &mut out,
        "feature_suite",
        golden.is_empty() && frs_ok && ed_bad == 0,
        format!(
            "golden mismatches {:?}; frs {:?}; edit distance violations {ed_bad}/1000",
            golden, frs_vals
        ),
    );

    // -- bleu
    let identity = sentence_bleu(&toks("the cat sat on the mat"), &toks("the cat sat on the mat"));
    let ex1 = sentence_bleu(&toks("a b c d"), &toks("a b c d e"));
    let ex2 = sentence_bleu(&toks("a a a a"), &toks("a b"));
    let o1 = bleu_oracle(&["a", "b", "c", "d"], &["a", "b", "c", "d", "e"]);
    let o2 = bleu_oracle(&["a", "a", "a", "a"], &["a", "b"]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = ["a", "b", "c", "d", "e"];
    let mut random_bad = 0;
    for _ in 0..500 {
        let h: Vec<&str> = (0..rng.random_range(4..10)).map(|_| words[rng.random_range(0..5)]).collect();
        let r: Vec<&str> = (0..rng.random_range(1..10)).map(|_| words[rng.random_range(0..5)]).collect();
        random_bad += usize::from((sentence_bleu(&h, &r) - bleu_oracle(&h, &r)).abs() > 0.01);
    }
    record(
        &mut out,
        "bleu",
        identity == 100.0 && (ex1 - o1).abs() <= 0.01 && (ex2 - o2).abs() <= 0.01 && random_bad == 0,
        format!("identity {identity}; {ex1:.4} vs oracle {o1:.4}; {ex2:.4} vs oracle {o2:.4}; random mismatches {random_bad}/500"),
    );

    // -- predictor
    let gx = random_inputs(30, 28, 8);
    let gy = nonlinear_targets(&gx);
    let one_epoch = MlpConfig {
        epochs: 1,
        ..MlpConfig::default()
    };
    let (gm, _) = train_mlp(&gx, &gy, InputMode::Features, &one_epoch, "g").unwrap();
    let grad_rel = gradient_check(&gm, &gx[..5], &gy[..5], one_epoch.alpha, 1e-5);
    let xs = random_inputs(22_000, 28, 2);
    let ys = nonlinear_targets(&xs);
    let cfg = MlpConfig::default();
    let (model, _) = train_mlp(&xs[..20_000], &ys[..20_000], InputMode::Features, &cfg, "s").unwrap();
    let eval = evaluate_predictor(&model, &xs[20_000..], &ys[20_000..]).unwrap();
    let rs: Vec<f64> = eval.iter().map(|e| e.pearson_r.unwrap_or(f64::NAN)).collect();
    let small = MlpConfig {
        epochs: 3,
        ..MlpConfig::default()
    };
    let (m1, _) = train_mlp(&xs[..2000], &ys[..2000], InputMode::Features, &small, "d").unwrap();
    let (m2, _) = train_mlp(&xs[..2000], &ys[..2000], InputMode::Features, &small, "d").unwrap();
    let deterministic = m1.to_bytes() == m2.to_bytes();
    record(
        &mut out,
        "predictor",
        grad_rel <= 1e-4 && rs.iter().all(|&r| r >= 0.95) && deterministic && cfg.epochs <= 20 && cfg.hidden == [100, 100],
        format!(
            "gradient rel err {grad_rel:.2e}; held-out r tm/gs/cm {:.3}/{:.3}/{:.3} after {} epochs; byte-identical retrain {deterministic}",
            rs[0], rs[1], rs[2], cfg.epochs
        ),
    );

    // -- hallucination harness
    let h = harness();
    record(
        &mut out,
        "hallucination_harness",
        h.ratio == h.expected && h.counts_ok && h.vocab >= 300 && h.positions >= 4,
        format!(
            "ratio {} vs analytic {}; {} tokens x {} positions per source, counts match {}",
            h.ratio, h.expected, h.vocab, h.positions, h.counts_ok
        ),
    );

    // -- artifact (run first, reported last)
    let mem_ok = art.peak_delta_kib.is_some_and(|k| k < 64 * 1024);
    record(
        &mut out,
        "artifact_round_trip",
        art.lossless && art.rows == 1_000_000 && mem_ok && art.tamper_detected,
        format!(
            "lossless {}; {}; peak RSS growth {} KiB (bound 65536); tamper detected {}",
            art.lossless,
            art.detail,
            art.peak_delta_kib.map_or("unknown".into(), |k| k.to_string()),
            art.tamper_detected
        ),
    );

    let passed = out.iter().filter(|o| o.pass).count();
    say(&format!("acceptance: {passed}/{} criteria pass", out.len()));
    let hard: Vec<String> = out
        .iter()
        .filter(|o| !o.pass && !REPORT_ONLY.contains(&o.name))
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(hard.is_empty(), "failing criteria: {hard:#?}");
}
