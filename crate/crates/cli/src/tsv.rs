//! Side files exchanged between verbs: feature and signal tables, id
//! lists and plain number streams.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result, bail, ensure};
use memcart::ExampleId;
use memcart::features::{FEATURE_NAMES, FeatureVector, N_FEATURES};
use memcart::flags::Flags;
use memcart::signals::{N_SIGNALS, SIGNAL_NAMES, TrainingSignals};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

fn parse_opt(raw: &str, what: &str, line: usize) -> Result<Option<f64>> {
    if raw == "NA" {
        return Ok(None);
    }
    let v: f64 = raw.parse().with_context(|| format!("line {line}: bad {what} value {raw:?}"))?;
    Ok(Some(v))
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split('\t').find_map(|f| f.strip_prefix(key)?.strip_prefix('='))
}

pub fn write_features(path: &Path, corpus_hash: &str, features: &[FeatureVector]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "#memcart-features\tcorpus_hash={corpus_hash}\tn_rows={}", features.len())?;
    writeln!(w, "id\t{}", FEATURE_NAMES.join("\t"))?;
    for (id, fv) in features.iter().enumerate() {
        let vals: Vec<String> = fv.options().into_iter().map(fmt_opt).collect();
        writeln!(w, "{id}\t{}", vals.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the corpus hash from the header and one vector per id `0..N`.
pub fn read_features(path: &Path) -> Result<(String, Vec<FeatureVector>)> {
    let mut lines = open_lines(path)?;
    let header = lines.next().map(|(_, l)| l).transpose()?.unwrap_or_default();
    ensure!(header.starts_with("#memcart-features"), "{}: not a feature table", path.display());
    let hash = header_value(&header, "corpus_hash").unwrap_or_default().to_owned();
    let columns = lines.next().map(|(_, l)| l).transpose()?.unwrap_or_default();
    let expected = format!("id\t{}", FEATURE_NAMES.join("\t"));
    ensure!(columns == expected, "{}: unexpected feature columns", path.display());
    let mut out = Vec::new();
    for (no, line) in lines {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        ensure!(fields.len() == N_FEATURES + 1, "{}: line {no} has {} fields", path.display(), fields.len());
        let id: usize = fields[0].parse().with_context(|| format!("line {no}: bad id"))?;
        ensure!(id == out.len(), "{}: line {no} carries id {id}, expected {}", path.display(), out.len());
        let mut vals = [None; N_FEATURES];
        for (k, raw) in fields[1..].iter().enumerate() {
            vals[k] = parse_opt(raw, FEATURE_NAMES[k], no)?;
        }
        out.push(FeatureVector::from_options(vals));
    }
    Ok((hash, out))
}

pub fn write_signals(path: &Path, signals: &[Option<TrainingSignals>]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "#memcart-signals\tn_rows={}", signals.len())?;
    writeln!(w, "id\t{}\tflags", SIGNAL_NAMES.join("\t"))?;
    for (id, s) in signals.iter().enumerate() {
        let (vals, flags) = match s {
            Some(s) => (s.to_array(), s.flags),
            None => ([None; N_SIGNALS], Flags::NONE),
        };
        let vals: Vec<String> = vals.into_iter().map(fmt_opt).collect();
        writeln!(w, "{id}\t{}\t{flags}", vals.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signals(path: &Path) -> Result<Vec<Option<TrainingSignals>>> {
    let mut lines = open_lines(path)?;
    let header = lines.next().map(|(_, l)| l).transpose()?.unwrap_or_default();
    ensure!(header.starts_with("#memcart-signals"), "{}: not a signal table", path.display());
    lines.next();
    let mut out = Vec::new();
    for (no, line) in lines {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        ensure!(fields.len() == N_SIGNALS + 2, "{}: line {no} has {} fields", path.display(), fields.len());
        let id: usize = fields[0].parse().with_context(|| format!("line {no}: bad id"))?;
        ensure!(id == out.len(), "{}: line {no} carries id {id}, expected {}", path.display(), out.len());
        let mut vals = [None; N_SIGNALS];
        for (k, raw) in fields[1..=N_SIGNALS].iter().enumerate() {
            vals[k] = parse_opt(raw, SIGNAL_NAMES[k], no)?;
        }
        let flags: Flags = fields[N_SIGNALS + 1]
            .parse()
            .map_err(|e| anyhow::anyhow!("line {no}: {e}"))?;
        out.push(TrainingSignals::from_array(vals, flags));
    }
    Ok(out)
}

/// Example ids, one per line. Lines starting with `#` are skipped, so
/// removal and selection manifests can be passed directly.
pub fn read_ids(path: &Path) -> Result<Vec<ExampleId>> {
    let mut out = Vec::new();
    for (no, line) in open_lines(path)? {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let first = t.split('\t').next().unwrap_or(t);
        match first.parse() {
            Ok(id) => out.push(id),
            Err(_) => bail!("{}: line {no}: bad example id {first:?}", path.display()),
        }
    }
    Ok(out)
}

/// Every whitespace-separated number in the file, in order.
pub fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (no, line) in open_lines(path)? {
        for tok in line?.split_whitespace() {
            out.push(tok.parse().with_context(|| format!("{}: line {no}: bad number {tok:?}", path.display()))?);
        }
    }
    Ok(out)
}

/// `id<TAB>text` lines keyed by id.
pub fn read_id_text(path: &Path) -> Result<std::collections::HashMap<ExampleId, Vec<String>>> {
    let mut out = std::collections::HashMap::new();
    for (no, line) in open_lines(path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        let id: ExampleId = id
            .parse()
            .with_context(|| format!("{}: line {no}: bad id {id:?}", path.display()))?;
        out.insert(id, text.split_whitespace().map(str::to_owned).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.tsv");
        let mut a = [None; N_FEATURES];
        a[0] = Some(3.0);
        a[7] = Some(-0.1234567890123);
        let rows = vec![FeatureVector::from_options(a), FeatureVector::from_options([Some(1e-300); N_FEATURES])];
        write_features(&p, "abc", &rows).unwrap();
        let (hash, back) = read_features(&p).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back, rows);
    }

    #[test]
    fn signal_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        let s = TrainingSignals {
            confidence: 0.5,
            variability: None,
            final_likelihood: 0.25,
            forgetting: None,
            hyp_likelihood: 0.25,
            final_minus_confidence: -0.25,
            flags: Flags::HYP_FALLBACK,
        };
        let rows = vec![Some(s), None];
        write_signals(&p, &rows).unwrap();
        assert_eq!(read_signals(&p).unwrap(), rows);
    }

    #[test]
    fn ids_skip_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ids");
        std::fs::write(&p, "#removal\tn=2\n4\n\n9\n").unwrap();
        assert_eq!(read_ids(&p).unwrap(), vec![4, 9]);
        std::fs::write(&p, "4\nx\n").unwrap();
        assert!(read_ids(&p).is_err());
    }
}
