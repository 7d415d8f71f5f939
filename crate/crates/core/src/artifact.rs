//! Map artifact: a versioned TSV with one row per example and a trailing
//! SHA-256 line over everything above it.
//!
//! ```text
//! #memcart-map  version=1  variant=ll  k=8  corpus_hash=..  n_rows=N
//! id  status  tm  gs  cm  n_train  n_heldout  flags  <28 features>  <6 signals>
//! ...
//! #checksum  sha256=..
//! ```
//!
//! Floats are written with 9 significant digits and nulls as `NA`. Reading
//! and writing both stream, so memory does not grow with the row count.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::ExampleId;
use crate::cartography::{MapRow, MemorisationMap};
use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, FeatureVector, N_FEATURES};
use crate::flags::Flags;
use crate::hashing::ContentHasher;
use crate::metrics::{MemorisationRecord, Metrics, Status, Variant};
use crate::signals::{N_SIGNALS, SIGNAL_NAMES, TrainingSignals};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#memcart-map";
const CHECKSUM_PREFIX: &str = "#checksum\tsha256=";
const NULL: &str = "NA";
const FIXED_COLUMNS: [&str; 8] = ["id", "status", "tm", "gs", "cm", "n_train", "n_heldout", "flags"];
pub const N_COLUMNS: usize = FIXED_COLUMNS.len() + N_FEATURES + N_SIGNALS;

/// Stored CM must agree with `max(0, tm - gs)` to this precision.
const CM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub variant: Variant,
    pub n_seeds: usize,
    pub corpus_hash: String,
    pub n_rows: usize,
}

impl ArtifactHeader {
    pub fn of(map: &MemorisationMap) -> Self {
        Self {
            variant: map.variant,
            n_seeds: map.n_seeds,
            corpus_hash: map.corpus_hash.clone(),
            n_rows: map.len(),
        }
    }

    fn lines(&self) -> String {
        format!(
            "{MAGIC}\tversion={FORMAT_VERSION}\tvariant={}\tk={}\tcorpus_hash={}\tn_rows={}\n{}\n",
            self.variant,
            self.n_seeds,
            self.corpus_hash,
            self.n_rows,
            column_names().join("\t")
        )
    }
}

pub fn column_names() -> Vec<&'static str> {
    FIXED_COLUMNS
        .iter()
        .chain(FEATURE_NAMES.iter())
        .chain(SIGNAL_NAMES.iter())
        .copied()
        .collect()
}

fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// The value a float takes after a write/read cycle.
pub fn quantize(x: f64) -> f64 {
    format_float(x).parse().unwrap_or(x)
}

fn push_opt(line: &mut String, v: Option<f64>) {
    line.push('\t');
    match v {
        Some(x) => line.push_str(&format_float(x)),
        None => line.push_str(NULL),
    }
}

fn format_row(row: &MapRow, line: &mut String) {
    use std::fmt::Write as _;
    line.clear();
    let r = &row.record;
    let _ = write!(line, "{}\t{}", r.example_id, r.status);
    for f in [r.metrics.map(|m| m.tm), r.metrics.map(|m| m.gs), r.metrics.map(|m| m.cm)] {
        push_opt(line, f);
    }
    let _ = write!(line, "\t{}\t{}\t{}", r.n_train_models, r.n_heldout_models, r.flags);
    for v in row.features.options() {
        push_opt(line, v);
    }
    let signals = row.signals.map(|s| s.to_array()).unwrap_or([None; N_SIGNALS]);
    for v in signals {
        push_opt(line, v);
    }
    line.push('\n');
}

/// Streaming writer. Rows must arrive in id order.
pub struct MapWriter<W: Write> {
    out: W,
    hasher: ContentHasher,
    header: ArtifactHeader,
    written: usize,
    line: String,
}

impl<W: Write> MapWriter<W> {
    pub fn new(mut out: W, header: ArtifactHeader) -> Result<Self> {
        let mut hasher = ContentHasher::new();
        let head = header.lines();
        hasher.update(&head);
        out.write_all(head.as_bytes()).map_err(write_err)?;
        Ok(Self {
            out,
            hasher,
            header,
            written: 0,
            line: String::with_capacity(512),
        })
    }

    pub fn write_row(&mut self, row: &MapRow) -> Result<()> {
        if row.id() != self.written {
            return Err(Error::InvalidArgument(format!(
                "row {} written at position {}",
                row.id(),
                self.written
            )));
        }
        format_row(row, &mut self.line);
        self.hasher.update(&self.line);
        self.out.write_all(self.line.as_bytes()).map_err(write_err)?;
        self.written += 1;
        Ok(())
    }

    /// Appends the checksum line and returns the writer and the checksum.
    pub fn finish(mut self) -> Result<(W, String)> {
        if self.written != self.header.n_rows {
            return Err(Error::InvalidArgument(format!(
                "header promises {} rows, wrote {}",
                self.header.n_rows, self.written
            )));
        }
        let sum = self.hasher.finish();
        writeln!(self.out, "{CHECKSUM_PREFIX}{sum}").map_err(write_err)?;
        self.out.flush().map_err(write_err)?;
        Ok((self.out, sum))
    }
}

fn write_err(e: std::io::Error) -> Error {
    Error::io("<artifact>", e)
}

/// Writes rows through a temporary file in the target directory and
/// renames it into place, so a failure leaves no partial artifact.
pub fn write_rows_atomic<'a>(
    path: &Path,
    header: ArtifactHeader,
    rows: impl IntoIterator<Item = std::borrow::Cow<'a, MapRow>>,
) -> Result<String> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    let file = tmp.as_file().try_clone().map_err(|e| Error::io(tmp.path(), e))?;
    let mut w = MapWriter::new(BufWriter::with_capacity(1 << 20, file), header)?;
    for row in rows {
        w.write_row(&row)?;
    }
    let (buf, sum) = w.finish()?;
    let file = buf.into_inner().map_err(|e| Error::io(tmp.path(), e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(sum)
}

/// Writes the artifact and returns its checksum.
pub fn write_map_artifact(map: &MemorisationMap, path: &Path) -> Result<String> {
    write_rows_atomic(path, ArtifactHeader::of(map), map.rows().iter().map(std::borrow::Cow::Borrowed))
}

/// Checksum the artifact of `map` would carry, computed without writing.
pub fn map_body_hash(map: &MemorisationMap) -> String {
    let mut hasher = ContentHasher::new();
    hasher.update(ArtifactHeader::of(map).lines());
    let mut line = String::with_capacity(512);
    for row in map.rows() {
        format_row(row, &mut line);
        hasher.update(&line);
    }
    hasher.finish()
}

/// Streaming reader yielding rows; the checksum is verified when the last
/// row has been read, so only a fully consumed reader has been validated.
pub struct MapReader<R: BufRead> {
    input: R,
    pub header: ArtifactHeader,
    hasher: Option<ContentHasher>,
    context: String,
    line_no: usize,
    next_id: ExampleId,
    line: String,
    done: bool,
}

impl MapReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::with_capacity(1 << 20, f), path.display().to_string())
    }
}

fn parse_header(line: &str, ctx: &str) -> Result<ArtifactHeader> {
    let mut parts = line.trim_end_matches('\n').split('\t');
    if parts.next() != Some(MAGIC) {
        return Err(Error::parse(ctx, 1, 1, "not a memorisation map artifact"));
    }
    let fields: std::collections::HashMap<&str, &str> = parts.filter_map(|p| p.split_once('=')).collect();
    let version = fields.get("version").copied().unwrap_or("");
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version.to_owned(),
        });
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::parse(ctx, 1, 1, format!("header lacks {k}")))
    };
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::parse(ctx, 1, 1, format!("bad {k}"))) };
    Ok(ArtifactHeader {
        variant: get("variant")?.parse().map_err(|e: String| Error::parse(ctx, 1, 1, e))?,
        n_seeds: num("k")?,
        corpus_hash: get("corpus_hash")?.to_owned(),
        n_rows: num("n_rows")?,
    })
}

impl<R: BufRead> MapReader<R> {
    pub fn new(mut input: R, context: String) -> Result<Self> {
        let mut hasher = ContentHasher::new();
        let mut line = String::new();
        let read = |input: &mut R, line: &mut String| -> Result<usize> {
            line.clear();
            input.read_line(line).map_err(|e| Error::io(&context, e))
        };
        if read(&mut input, &mut line)? == 0 {
            return Err(Error::Truncated("empty file".into()));
        }
        let header = parse_header(&line, &context)?;
        hasher.update(&line);
        if read(&mut input, &mut line)? == 0 {
            return Err(Error::Truncated("missing column header".into()));
        }
        let expected = column_names().join("\t");
        let found = line.trim_end_matches('\n');
        if found != expected {
            return Err(Error::ColumnMismatch {
                expected,
                found: found.to_owned(),
            });
        }
        hasher.update(&line);
        Ok(Self {
            input,
            header,
            hasher: Some(hasher),
            context,
            line_no: 2,
            next_id: 0,
            line,
            done: false,
        })
    }

    fn finish_checksum(&mut self) -> Result<()> {
        let found_line = self.line.trim_end_matches('\n');
        let expected = found_line.strip_prefix(CHECKSUM_PREFIX).unwrap_or_default().to_owned();
        let found = self.hasher.take().map(ContentHasher::finish).unwrap_or_default();
        if expected != found {
            return Err(Error::ChecksumMismatch { expected, found });
        }
        if self.next_id != self.header.n_rows {
            return Err(Error::Truncated(format!(
                "header promises {} rows, found {}",
                self.header.n_rows, self.next_id
            )));
        }
        self.line.clear();
        let extra = self.input.read_line(&mut self.line).map_err(|e| Error::io(&self.context, e))?;
        if extra != 0 {
            return Err(Error::parse(&self.context, self.line_no + 1, 1, "content after checksum line"));
        }
        Ok(())
    }

    fn parse_row(&self) -> Result<MapRow> {
        let ctx = &self.context;
        let ln = self.line_no;
        let text = self.line.strip_suffix('\n').ok_or_else(|| Error::Truncated(format!("line {ln} is cut off")))?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != N_COLUMNS {
            return Err(Error::parse(
                ctx,
                ln,
                1,
                format!("expected {N_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let opt = |k: usize| -> Result<Option<f64>> {
            if fields[k] == NULL {
                return Ok(None);
            }
            fields[k]
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::parse(ctx, ln, k + 1, format!("bad number {:?}", fields[k])))
        };
        let int = |k: usize| -> Result<usize> {
            fields[k]
                .parse()
                .map_err(|_| Error::parse(ctx, ln, k + 1, format!("bad count {:?}", fields[k])))
        };
        let id = int(0)?;
        if id != self.next_id {
            return Err(Error::parse(ctx, ln, 1, format!("expected id {}, found {id}", self.next_id)));
        }
        let status: Status = fields[1].parse().map_err(|e: String| Error::parse(ctx, ln, 2, e))?;
        let flags: Flags = fields[7].parse().map_err(|e: String| Error::parse(ctx, ln, 8, e))?;
        let metrics = match (status, opt(2)?, opt(3)?, opt(4)?) {
            (Status::Ok, Some(tm), Some(gs), Some(cm)) => {
                let m = Metrics::new(tm, gs);
                if (m.cm - cm).abs() > CM_TOLERANCE {
                    return Err(Error::parse(ctx, ln, 5, format!("cm {cm} disagrees with tm and gs")));
                }
                Some(m)
            }
            (Status::Ok, ..) => return Err(Error::parse(ctx, ln, 3, "ok row with null metrics")),
            (_, None, None, None) => None,
            _ => return Err(Error::parse(ctx, ln, 3, "invalid row with metrics")),
        };
        let mut features = FeatureVector::empty();
        for i in 0..N_FEATURES {
            features.set(i, opt(FIXED_COLUMNS.len() + i)?);
        }
        let base = FIXED_COLUMNS.len() + N_FEATURES;
        let mut sig = [None; N_SIGNALS];
        for (i, s) in sig.iter_mut().enumerate() {
            *s = opt(base + i)?;
        }
        let signals = if sig.iter().all(Option::is_none) {
            None
        } else {
            Some(
                TrainingSignals::from_array(sig, flags & Flags::HYP_FALLBACK)
                    .ok_or_else(|| Error::parse(ctx, ln, base + 1, "required signal is null"))?,
            )
        };
        Ok(MapRow {
            record: MemorisationRecord {
                example_id: id,
                variant: self.header.variant,
                status,
                metrics,
                n_train_models: int(5)?,
                n_heldout_models: int(6)?,
                flags,
            },
            features,
            signals,
        })
    }

    fn next_row(&mut self) -> Result<Option<MapRow>> {
        self.line.clear();
        let n = self
            .input
            .read_line(&mut self.line)
            .map_err(|e| Error::io(&self.context, e))?;
        self.line_no += 1;
        if n == 0 {
            return Err(Error::Truncated(format!("no checksum line after {} rows", self.next_id)));
        }
        if self.line.starts_with('#') {
            self.finish_checksum()?;
            return Ok(None);
        }
        let row = self.parse_row()?;
        if let Some(h) = self.hasher.as_mut() {
            h.update(&self.line);
        }
        self.next_id += 1;
        Ok(Some(row))
    }
}

impl<R: BufRead> Iterator for MapReader<R> {
    type Item = Result<MapRow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_row() {
            Ok(Some(row)) => Some(Ok(row)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_map_artifact(path: &Path) -> Result<MemorisationMap> {
    let reader = MapReader::open(path)?;
    let header = reader.header.clone();
    let rows = reader.collect::<Result<Vec<_>>>()?;
    MemorisationMap::from_rows(header.variant, header.n_seeds, header.corpus_hash, rows)
}
