use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn tp(id: usize, src_ws: &str, src_bpe: &str, trg_ws: &str, trg_bpe: &str) -> TokenizedPair {
    TokenizedPair {
        pair_id: id,
        src_ws: toks(src_ws),
        trg_ws: toks(trg_ws),
        src_bpe: toks(src_bpe),
        trg_bpe: toks(trg_bpe),
    }
}

fn golden_corpus() -> Vec<TokenizedPair> {
    vec![
        tp(0, "the cat sat", "the c@@ at s@@ at", "de kat zat", "de k@@ at z@@ at"),
        tp(1, "the dog , 1999", "the dog , 19@@ 99", "de hond , 1999", "de hond , 19@@ 99"),
        tp(2, "cat", "c@@ at", "de kat zat", "de k@@ at z@@ at"),
    ]
}

fn assert_vector(got: &FeatureVector, want: [Option<f64>; N_FEATURES]) {
    for (i, w) in want.iter().enumerate() {
        match (got.get(i), w) {
            (Some(g), Some(w)) => assert!((g - w).abs() < 1e-12, "{}: got {g}, want {w}", FEATURE_NAMES[i]),
            (g, w) => assert_eq!(g, *w, "{}", FEATURE_NAMES[i]),
        }
    }
}

#[test]
fn golden_vectors() {
    let pairs = golden_corpus();
    let ctx = FeatureContext::build(&pairs);
    let aligns = [
        AlignmentLinks::new(0, [(0, 0), (1, 1), (2, 2)]),
        AlignmentLinks::new(1, [(0, 0), (1, 1), (3, 3)]),
        AlignmentLinks::new(2, [(0, 1)]),
    ];
    let bts = [Some(toks("the cat sits")), None, Some(toks("the cat"))];
    let (l2, l3) = (2f64.ln(), 3f64.ln());
    let got: Vec<FeatureVector> = (0..3)
        .map(|i| extract_features(&pairs[i], &ctx, Some(&aligns[i]), bts[i].as_deref()))
        .collect();

    assert_vector(
        &got[0],
        [
            Some(3.0),
            Some(5.0),
            Some(3.0),
            Some(5.0),
            Some(1.0),
            Some(1.0),
            Some(2.0 * l2 / 3.0),
            Some((2.0 * l2 + 2.0 * l3) / 5.0),
            Some((l3 + 2.0 * l2) / 3.0),
            Some((l3 + 6.0 * l2) / 5.0),
            Some(0.0),
            Some(0.0),
            Some(l2),
            Some(l2),
            Some(2.0),
            Some(0.4),
            Some(0.4),
            Some(0.0),
            Some(0.0),
            Some(3.0),
            Some(1.0),
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(1.0),
            Some(0.4),
            Some(0.0),
        ],
    );
    assert_vector(
        &got[1],
        [
            Some(4.0),
            Some(5.0),
            Some(4.0),
            Some(5.0),
            Some(1.0),
            Some(1.0),
            Some(l2 / 4.0),
            Some(l2 / 5.0),
            Some(l3 / 4.0),
            Some(l3 / 5.0),
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(0.0),
            Some(1.0),
            Some(0.2),
            Some(0.2),
            Some(0.25),
            Some(0.25),
            Some(2.0),
            None,
            Some(0.0),
            Some(0.0),
            Some(0.25),
            Some(0.25),
            Some(0.5),
            Some(0.6),
            Some(1.0 / 3.0),
        ],
    );
    assert!(!got[1].is_complete());
    assert_eq!(got[1].missing(), vec![20]);
    assert_vector(
        &got[2],
        [
            Some(1.0),
            Some(2.0),
            Some(3.0),
            Some(5.0),
            Some(1.0 / 3.0),
            Some(0.4),
            Some(l2),
            Some((l2 + l3) / 2.0),
            Some((l3 + 2.0 * l2) / 3.0),
            Some((l3 + 6.0 * l2) / 5.0),
            Some(l2),
            Some(l2),
            Some(l2),
            Some(l2),
            Some(2.0),
            Some(0.5),
            Some(0.4),
            Some(0.0),
            Some(0.0),
            Some(3.0),
            Some(1.0),
            Some(-2.0),
            Some(-3.0),
            Some(0.0),
            Some(2.0 / 3.0),
            Some(1.0),
            Some(0.5),
            Some(0.0),
        ],
    );
}

#[test]
fn header_is_stable() {
    assert_eq!(FEATURE_NAMES.len(), 28);
    assert_eq!(FEATURE_NAMES[0], "src_len_ws");
    assert_eq!(FEATURE_NAMES[12], "min_logfreq_trg_ws");
    assert_eq!(FEATURE_NAMES[27], "word_overlap");
    let unique: HashSet<&str> = FEATURE_NAMES.iter().copied().collect();
    assert_eq!(unique.len(), 28);
}

#[test]
fn min_logfreq_of_rare_token() {
    let mut trg = vec!["the"; 1000];
    trg.extend(["zyx", "zyx"]);
    let table = FrequencyTable::from_tokens(Side::Target, Granularity::Whitespace, trg);
    let (_, min) = log_freq_stats(&table, &toks("the zyx"));
    assert!((min.unwrap() - 2f64.ln()).abs() < 1e-15);
    let (_, min) = log_freq_stats(&table, &toks("unseen"));
    assert_eq!(min, Some(0.0));
}

#[test]
fn segmentation_example() {
    assert!((segmentation(3, 5).unwrap() - 0.4).abs() < 1e-15);
}

#[test]
fn overlap_examples() {
    assert_eq!(token_overlap(&toks("a b"), &toks("c d")), Some(0.0));
    assert_eq!(token_overlap(&toks("a b"), &toks("a b")), Some(1.0));
    assert!((token_overlap(&toks("a b c"), &toks("c d")).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(word_overlap(&toks("The ,"), &toks("the")), Some(1.0));
    assert_eq!(word_overlap(&toks(", ."), &toks("the")), None);
}

#[test]
fn missing_alignment_is_null() {
    let pairs = golden_corpus();
    let ctx = FeatureContext::build(&pairs);
    let v = extract_features(&pairs[0], &ctx, None, None);
    assert_eq!(v.missing(), vec![20, 23, 24, 25]);
}

#[test]
fn extract_all_preserves_order() {
    let pairs = golden_corpus();
    let ctx = FeatureContext::build(&pairs);
    let all = extract_all(&pairs, &ctx, None, None);
    for (i, v) in all.iter().enumerate() {
        assert_eq!(*v, extract_features(&pairs[i], &ctx, None, None));
    }
}
