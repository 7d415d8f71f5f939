use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::ExampleId;
use crate::error::{Error, Result};
use crate::hashing::{ContentHasher, derive_seed};

/// Parameters of the half-corpus ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlan {
    pub n_examples: usize,
    pub n_seeds: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
}

impl SplitPlan {
    pub fn new(n_examples: usize, n_seeds: usize, master_seed: u64) -> Self {
        Self {
            n_examples,
            n_seeds,
            master_seed,
            train_fraction: 0.5,
        }
    }

    pub fn train_size(&self) -> usize {
        (self.train_fraction * self.n_examples as f64).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.n_seeds < 2 {
            return Err(Error::InvalidArgument("need at least 2 seeds".into()));
        }
        if self.n_examples < 2 {
            return Err(Error::InvalidArgument("need at least 2 examples".into()));
        }
        Ok(())
    }
}

/// `K x N` train/held-out assignment; `true` means the example is in that
/// seed's training half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipMatrix {
    n_examples: usize,
    rows: Vec<Vec<bool>>,
}

impl MembershipMatrix {
    pub fn from_rows(n_examples: usize, rows: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != n_examples) {
            return Err(Error::DimensionMismatch {
                expected: n_examples,
                found: rows[bad].len(),
            });
        }
        Ok(Self { n_examples, rows })
    }

    pub fn n_seeds(&self) -> usize {
        self.rows.len()
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn in_train(&self, seed: usize, example: ExampleId) -> bool {
        self.rows[seed][example]
    }

    pub fn row(&self, seed: usize) -> &[bool] {
        &self.rows[seed]
    }

    pub fn train_ids(&self, seed: usize) -> Vec<ExampleId> {
        self.rows[seed]
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Number of seeds whose training half contains the example.
    pub fn train_count(&self, example: ExampleId) -> usize {
        self.rows.iter().filter(|r| r[example]).count()
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.field(self.n_examples.to_string());
        for row in &self.rows {
            let bytes: Vec<u8> = row.iter().map(|&b| b as u8).collect();
            h.field(bytes);
        }
        h.finish()
    }
}

/// Row `k` is a uniformly random `floor(f * N)`-subset drawn from a
/// generator seeded by `(master_seed, k)`.
pub fn make_splits(plan: &SplitPlan) -> Result<MembershipMatrix> {
    plan.validate()?;
    let m = plan.train_size();
    let rows = (0..plan.n_seeds)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("split", &[plan.master_seed, k as u64]));
            let mut row = vec![false; plan.n_examples];
            for i in index::sample(&mut rng, plan.n_examples, m) {
                row[i] = true;
            }
            row
        })
        .collect();
    MembershipMatrix::from_rows(plan.n_examples, rows)
}

const MANIFEST_TAG: &str = "#membership";

/// Writes one line per seed, `seed<TAB>space-separated train ids`, after a
/// header and followed by the content hash.
pub fn write_membership_manifest(matrix: &MembershipMatrix, path: &Path) -> Result<()> {
    let mut out = format!(
        "{MANIFEST_TAG}\tn_examples={}\tn_seeds={}\n",
        matrix.n_examples,
        matrix.n_seeds()
    );
    for k in 0..matrix.n_seeds() {
        let _ = write!(out, "{k}\t");
        let ids: Vec<String> = matrix.train_ids(k).iter().map(ToString::to_string).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    let _ = writeln!(out, "#sha256\t{}", matrix.content_hash());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_membership_manifest(path: &Path) -> Result<MembershipMatrix> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(&ctx, 1, 1, "empty manifest"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MANIFEST_TAG) {
        return Err(Error::parse(&ctx, 1, 1, "missing #membership header"));
    }
    let field = |f: Option<&str>, key: &str| -> Result<usize> {
        f.and_then(|s| s.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(&ctx, 1, 1, format!("missing {key}")))
    };
    let n = field(fields.next(), "n_examples=")?;
    let k = field(fields.next(), "n_seeds=")?;
    let mut rows = Vec::with_capacity(k);
    let mut hash = None;
    for (i, line) in lines {
        if let Some(h) = line.strip_prefix("#sha256\t") {
            hash = Some(h.to_owned());
            continue;
        }
        let (seed, ids) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&ctx, i + 1, 1, "expected seed<TAB>ids"))?;
        if seed.parse::<usize>().ok() != Some(rows.len()) {
            return Err(Error::parse(&ctx, i + 1, 1, "seeds must be listed in order"));
        }
        let mut row = vec![false; n];
        for tok in ids.split_whitespace() {
            let id: usize = tok
                .parse()
                .ok()
                .filter(|&id| id < n)
                .ok_or_else(|| Error::parse(&ctx, i + 1, 1, format!("bad example id {tok:?}")))?;
            row[id] = true;
        }
        rows.push(row);
    }
    if rows.len() != k {
        return Err(Error::Truncated(format!("{ctx}: expected {k} seeds, found {}", rows.len())));
    }
    let matrix = MembershipMatrix::from_rows(n, rows)?;
    match hash {
        Some(h) if h == matrix.content_hash() => Ok(matrix),
        Some(h) => Err(Error::ChecksumMismatch {
            expected: h,
            found: matrix.content_hash(),
        }),
        None => Err(Error::Truncated(format!("{ctx}: missing hash line"))),
    }
}
