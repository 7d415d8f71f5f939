//! Memorisation maps and the experiments and statistics built on them.

mod analysis;
mod grid;
mod removal;
mod sampling;

use crate::ExampleId;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::flags::Flags;
use crate::metrics::{MemorisationRecord, Metric, Variant};
use crate::signals::TrainingSignals;

pub use analysis::{
    BucketDelta, CmSummary, Centroid, CorrelationTable, HISTOGRAM_BINS, compare_maps, correlation_table, group_centroids, join_on_source,
    probability_buckets, read_labels, region_summary, RegionSummary, trace_cm_of_examples, trigram_uniqueness,
};
pub use grid::{GridCoordinate, assign_regions, grid_coordinates, nearest_coordinate};
pub use removal::{
    DEFAULT_MIN_REGION, DEFAULT_TOKEN_BUDGET, PerfMetric, PerformanceRecord, RegionStat, RelevanceReport, RemovalSet, nearest_removal_set, read_performance,
    read_removal_manifest, region_relevance, write_performance, write_removal_manifest,
};
pub(crate) use removal::header_fields;
pub use sampling::{
    Bounds, PointSample, SampleResult, read_selection_manifest, sample_points, specialised_sample, write_selection_manifest,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub record: MemorisationRecord,
    pub features: FeatureVector,
    pub signals: Option<TrainingSignals>,
}

impl MapRow {
    pub fn id(&self) -> ExampleId {
        self.record.example_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub id: ExampleId,
    pub tm: f64,
    pub gs: f64,
    pub cm: f64,
}

impl MapPoint {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Tm => self.tm,
            Metric::Gs => self.gs,
            Metric::Cm => self.cm,
        }
    }
}

/// One row per example id `0..N`, x = TM, y = GS.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorisationMap {
    pub variant: Variant,
    pub n_seeds: usize,
    pub corpus_hash: String,
    rows: Vec<MapRow>,
}

impl MemorisationMap {
    /// Rows must be ordered by id with ids `0..N`.
    pub fn from_rows(variant: Variant, n_seeds: usize, corpus_hash: String, rows: Vec<MapRow>) -> Result<Self> {
        if let Some((i, r)) = rows.iter().enumerate().find(|(i, r)| r.id() != *i) {
            return Err(Error::InvalidArgument(format!("row {i} carries id {}", r.id())));
        }
        Ok(Self {
            variant,
            n_seeds,
            corpus_hash,
            rows,
        })
    }

    /// Joins records with optional features and signals. Row flags collect
    /// the partial-feature and hypothesis-fallback markers.
    pub fn assemble(
        records: Vec<MemorisationRecord>,
        features: Option<Vec<FeatureVector>>,
        signals: Option<Vec<Option<TrainingSignals>>>,
        n_seeds: usize,
        corpus_hash: &str,
    ) -> Result<Self> {
        let n = records.len();
        for (name, len) in [
            ("features", features.as_ref().map(Vec::len)),
            ("signals", signals.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len.filter(|&l| l != n) {
                return Err(Error::InvalidArgument(format!("{name} cover {len} examples, records cover {n}")));
            }
        }
        let variant = records.first().map_or(Variant::Ll, |r| r.variant);
        let mut features = features.map(Vec::into_iter);
        let mut signals = signals.map(Vec::into_iter);
        let rows = records
            .into_iter()
            .map(|mut record| {
                let features = features.as_mut().and_then(Iterator::next).unwrap_or_default();
                let signals = signals.as_mut().and_then(Iterator::next).flatten();
                if !features.is_complete() {
                    record.flags |= Flags::PARTIAL_FEATURES;
                }
                if let Some(s) = &signals {
                    record.flags |= s.flags;
                }
                MapRow {
                    record,
                    features,
                    signals,
                }
            })
            .collect();
        Self::from_rows(variant, n_seeds, corpus_hash.to_owned(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[MapRow] {
        &self.rows
    }

    pub fn get(&self, id: ExampleId) -> Option<&MapRow> {
        self.rows.get(id)
    }

    /// Valid examples only.
    pub fn points(&self) -> impl Iterator<Item = MapPoint> + '_ {
        self.rows.iter().filter_map(|r| {
            r.record.metrics.map(|m| MapPoint {
                id: r.id(),
                tm: m.tm,
                gs: m.gs,
                cm: m.cm,
            })
        })
    }

    pub fn n_valid(&self) -> usize {
        self.rows.iter().filter(|r| r.record.is_valid()).count()
    }

    /// SHA-256 of the artifact body, so it matches the written checksum.
    pub fn content_hash(&self) -> String {
        crate::artifact::map_body_hash(self)
    }
}
