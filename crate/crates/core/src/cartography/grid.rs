use std::fmt;

use super::MemorisationMap;
use crate::ExampleId;
use crate::error::{Error, Result};

/// Lattice point `(a / n, b / n)` with `1 <= b <= a <= n`; `i` is the TM
/// axis and `j` the GS axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoordinate {
    pub a: u32,
    pub b: u32,
    pub n: u32,
}

impl GridCoordinate {
    pub fn i(&self) -> f64 {
        self.a as f64 / self.n as f64
    }

    pub fn j(&self) -> f64 {
        self.b as f64 / self.n as f64
    }

    pub fn distance_sq(&self, tm: f64, gs: f64) -> f64 {
        let (di, dj) = (tm - self.i(), gs - self.j());
        di * di + dj * dj
    }

    /// Parses `i,j` onto the lattice with `n` steps.
    pub fn parse(s: &str, n: u32) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad grid coordinate {s:?}"));
        let (i, j) = s.split_once(',').ok_or_else(bad)?;
        let to_lattice = |v: &str| -> Result<u32> {
            let x: f64 = v.trim().parse().map_err(|_| bad())?;
            let k = (x * n as f64).round();
            if (k - x * n as f64).abs() > 1e-6 || k < 1.0 || k > n as f64 {
                return Err(bad());
            }
            Ok(k as u32)
        };
        let (a, b) = (to_lattice(i)?, to_lattice(j)?);
        if b > a {
            return Err(bad());
        }
        Ok(Self { a, b, n })
    }
}

impl fmt::Display for GridCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.i(), self.j())
    }
}

fn lattice_steps(step: f64) -> Result<u32> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1")));
    }
    Ok(n as u32)
}

/// All lattice points with `j <= i`, ordered by `i` then `j`.
pub fn grid_coordinates(step: f64) -> Result<Vec<GridCoordinate>> {
    let n = lattice_steps(step)?;
    Ok((1..=n)
        .flat_map(|a| (1..=a).map(move |b| GridCoordinate { a, b, n }))
        .collect())
}

/// Nearest coordinate in Euclidean (tm, gs) distance; ties go to the
/// smaller `i`, then the smaller `j`.
pub fn nearest_coordinate(grid: &[GridCoordinate], tm: f64, gs: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in grid.iter().enumerate() {
        let d = c.distance_sq(tm, gs);
        let better = d < best_d || (d == best_d && (c.a, c.b) < (grid[best].a, grid[best].b));
        if better {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Region index (into `grid`) of every valid example.
pub fn assign_regions(map: &MemorisationMap, grid: &[GridCoordinate]) -> Vec<(ExampleId, usize)> {
    map.points().map(|p| (p.id, nearest_coordinate(grid, p.tm, p.gs))).collect()
}
