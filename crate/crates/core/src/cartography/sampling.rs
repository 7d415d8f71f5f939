//! Random sampling restricted to a rectangle of the (predicted) map.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{MapPoint, MemorisationMap};
use super::removal::{header_fields, read_id_lines};
use crate::ExampleId;
use crate::error::{Error, Result};

/// Closed rectangle in (tm, gs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub tm_min: f64,
    pub tm_max: f64,
    pub gs_min: f64,
    pub gs_max: f64,
}

impl Bounds {
    pub const FULL: Bounds = Bounds {
        tm_min: 0.0,
        tm_max: 1.0,
        gs_min: 0.0,
        gs_max: 1.0,
    };

    pub fn new(tm_min: f64, tm_max: f64, gs_min: f64, gs_max: f64) -> Result<Self> {
        let b = Self {
            tm_min,
            tm_max,
            gs_min,
            gs_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.tm_min, self.tm_max, self.gs_min, self.gs_max];
        if vals.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("bounds must lie in [0, 1]: {self}")));
        }
        if self.tm_min > self.tm_max || self.gs_min > self.gs_max {
            return Err(Error::InvalidArgument(format!("bounds have min above max: {self}")));
        }
        Ok(())
    }

    pub fn contains(&self, tm: f64, gs: f64) -> bool {
        (self.tm_min..=self.tm_max).contains(&tm) && (self.gs_min..=self.gs_max).contains(&gs)
    }

    /// Parses `tm_min,tm_max,gs_min,gs_max`.
    pub fn parse(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad bounds {s:?}")))?;
        match vals[..] {
            [a, b, c, d] => Self::new(a, b, c, d),
            _ => Err(Error::InvalidArgument(format!("bounds need 4 values, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Bounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.tm_min, self.tm_max, self.gs_min, self.gs_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub bounds: Bounds,
    pub seed: u64,
    pub reference_tokens: usize,
    /// Sampling order.
    pub ids: Vec<ExampleId>,
    pub total_tokens: usize,
    pub n_candidates: usize,
    /// The region ran out before reaching the reference budget.
    pub partial: bool,
}

/// Draws examples uniformly at random from those whose (tm, gs) fall in
/// `bounds` until their whitespace source tokens reach `reference_tokens`.
/// The total overshoots the reference by less than one sentence.
pub fn specialised_sample(
    map: &MemorisationMap,
    bounds: Bounds,
    reference_tokens: usize,
    source_tokens: &[usize],
    seed: u64,
) -> Result<SampleResult> {
    bounds.validate()?;
    if source_tokens.len() != map.len() {
        return Err(Error::DimensionMismatch {
            expected: map.len(),
            found: source_tokens.len(),
        });
    }
    let mut candidates: Vec<ExampleId> = map.points().filter(|p| bounds.contains(p.tm, p.gs)).map(|p| p.id).collect();
    let n_candidates = candidates.len();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ids = Vec::new();
    let mut total = 0;
    for id in candidates {
        if total >= reference_tokens {
            break;
        }
        total += source_tokens[id];
        ids.push(id);
    }
    Ok(SampleResult {
        bounds,
        seed,
        reference_tokens,
        ids,
        total_tokens: total,
        n_candidates,
        partial: total < reference_tokens,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub total_in_bounds: usize,
    /// Ordered by id.
    pub points: Vec<MapPoint>,
}

/// Valid points inside `bounds`, down-sampled uniformly to at most
/// `max_points`. Deterministic given the seed.
pub fn sample_points(map: &MemorisationMap, bounds: Bounds, max_points: usize, seed: u64) -> Result<PointSample> {
    bounds.validate()?;
    let inside: Vec<MapPoint> = map.points().filter(|p| bounds.contains(p.tm, p.gs)).collect();
    let total_in_bounds = inside.len();
    let points = if inside.len() <= max_points {
        inside
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, inside.len(), max_points).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| inside[i]).collect()
    };
    Ok(PointSample { total_in_bounds, points })
}

/// Header: `#selection<TAB>bounds=..<TAB>reference=..<TAB>tokens=..<TAB>seed=..<TAB>partial=..<TAB>map_hash=..`.
pub fn write_selection_manifest(s: &SampleResult, map_hash: &str, path: &Path) -> Result<()> {
    let mut out = format!(
        "#selection\tbounds={}\treference={}\ttokens={}\tseed={}\tcandidates={}\tpartial={}\tmap_hash={map_hash}\n",
        s.bounds, s.reference_tokens, s.total_tokens, s.seed, s.n_candidates, s.partial
    );
    for id in &s.ids {
        let _ = writeln!(out, "{id}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_selection_manifest(path: &Path) -> Result<(SampleResult, String)> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .filter(|(_, l)| l.starts_with("#selection"))
        .ok_or_else(|| Error::parse(&ctx, 1, 1, "missing #selection header"))?
        .1;
    let f = header_fields(header);
    let field = |k: &str| f.get(k).copied().ok_or_else(|| Error::parse(&ctx, 1, 1, format!("missing {k}")));
    let num = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| Error::parse(&ctx, 1, 1, format!("bad {k}")))
    };
    let result = SampleResult {
        bounds: Bounds::parse(field("bounds")?)?,
        seed: num("seed")?,
        reference_tokens: num("reference")? as usize,
        total_tokens: num("tokens")? as usize,
        n_candidates: num("candidates")? as usize,
        partial: field("partial")? == "true",
        ids: read_id_lines(lines, &ctx)?,
    };
    Ok((result, field("map_hash")?.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartography::testutil::map_of;
    use proptest::prelude::*;

    fn spread(n: usize) -> MemorisationMap {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let tm = (i % 10) as f64 / 10.0 + 0.05;
                (tm, tm * ((i / 10) % 10) as f64 / 10.0)
            })
            .collect();
        map_of(&pts)
    }

    #[test]
    fn whole_map_is_random_sampling() {
        let map = spread(200);
        let tokens = vec![5; 200];
        let s = specialised_sample(&map, Bounds::FULL, 100, &tokens, 3).unwrap();
        assert_eq!(s.n_candidates, 200);
        assert_eq!(s.ids.len(), 20);
        assert!(!s.partial);
        assert_eq!(s, specialised_sample(&map, Bounds::FULL, 100, &tokens, 3).unwrap());
        assert_ne!(s.ids, specialised_sample(&map, Bounds::FULL, 100, &tokens, 4).unwrap().ids);
    }

    #[test]
    fn empty_region_is_partial() {
        let map = spread(50);
        let b = Bounds::new(0.0, 0.01, 0.9, 1.0).unwrap();
        let s = specialised_sample(&map, b, 10, &[1; 50], 0).unwrap();
        assert!(s.ids.is_empty());
        assert!(s.partial);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(0.5, 0.4, 0.0, 1.0).is_err());
        assert!(Bounds::new(0.0, 1.5, 0.0, 1.0).is_err());
        assert!(Bounds::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
        assert_eq!(Bounds::parse("0,0.5,0.1,0.2").unwrap(), Bounds::new(0.0, 0.5, 0.1, 0.2).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let map = spread(60);
        let s = specialised_sample(&map, Bounds::new(0.3, 1.0, 0.0, 0.5).unwrap(), 40, &[3; 60], 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.tsv");
        write_selection_manifest(&s, "h", &p).unwrap();
        assert_eq!(read_selection_manifest(&p).unwrap(), (s, "h".to_string()));
    }

    #[test]
    fn point_sampling() {
        let map = spread(500);
        let all = sample_points(&map, Bounds::FULL, 1000, 0).unwrap();
        assert_eq!(all.points.len(), 500);
        let s = sample_points(&map, Bounds::FULL, 100, 7).unwrap();
        assert_eq!(s.total_in_bounds, 500);
        assert_eq!(s.points.len(), 100);
        assert!(s.points.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(s, sample_points(&map, Bounds::FULL, 100, 7).unwrap());
        let b = Bounds::new(0.5, 1.0, 0.0, 0.3).unwrap();
        let s = sample_points(&map, b, 10, 1).unwrap();
        assert!(s.points.iter().all(|p| b.contains(p.tm, p.gs)));
    }

    proptest! {
        #[test]
        fn total_within_one_sentence_of_reference(
            tokens in prop::collection::vec(1usize..40, 100),
            reference in 0usize..3000,
            seed in any::<u64>(),
        ) {
            let map = spread(100);
            let s = specialised_sample(&map, Bounds::FULL, reference, &tokens, seed).unwrap();
            let sum: usize = s.ids.iter().map(|&i| tokens[i]).sum();
            prop_assert_eq!(sum, s.total_tokens);
            if s.partial {
                prop_assert_eq!(s.ids.len(), 100);
            } else {
                prop_assert!(s.total_tokens >= reference);
                if let Some(&last) = s.ids.last() {
                    prop_assert!(s.total_tokens - tokens[last] < reference);
                }
            }
        }
    }
}
