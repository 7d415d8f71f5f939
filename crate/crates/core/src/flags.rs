//! Per-row provenance flags carried through maps and artifacts.

use std::fmt;
use std::ops::{BitAnd, BitOr, BitOrAssign};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags(u32);

impl Flags {
    pub const NONE: Flags = Flags(0);
    /// A probability hit the 1e-12 floor before taking its log.
    pub const FLOORED: Flags = Flags(1);
    /// Predicted values were clamped into [0, 1].
    pub const CLAMPED: Flags = Flags(1 << 1);
    /// No hypothesis series; the final target likelihood was used instead.
    pub const HYP_FALLBACK: Flags = Flags(1 << 2);
    /// At least one feature is null.
    pub const PARTIAL_FEATURES: Flags = Flags(1 << 3);
    /// Metrics came from the predictor rather than an ensemble.
    pub const PREDICTED: Flags = Flags(1 << 4);

    const NAMES: [(Flags, &'static str); 5] = [
        (Flags::FLOORED, "floored"),
        (Flags::CLAMPED, "clamped"),
        (Flags::HYP_FALLBACK, "hyp_fallback"),
        (Flags::PARTIAL_FEATURES, "partial_features"),
        (Flags::PREDICTED, "predicted"),
    ];

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn set(&mut self, other: Flags, on: bool) {
        if on {
            self.0 |= other.0;
        } else {
            self.0 &= !other.0;
        }
    }
}

impl BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl BitAnd for Flags {
    type Output = Flags;
    fn bitand(self, rhs: Flags) -> Flags {
        Flags(self.0 & rhs.0)
    }
}

impl BitOrAssign for Flags {
    fn bitor_assign(&mut self, rhs: Flags) {
        self.0 |= rhs.0;
    }
}

/// Comma-separated names, `-` when empty.
impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let names: Vec<&str> = Flags::NAMES
            .iter()
            .filter(|(fl, _)| self.contains(*fl))
            .map(|(_, n)| *n)
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Flags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "-" || s.is_empty() {
            return Ok(Flags::NONE);
        }
        let mut out = Flags::NONE;
        for name in s.split(',') {
            let (fl, _) = Flags::NAMES
                .iter()
                .find(|(_, n)| *n == name)
                .ok_or_else(|| format!("unknown flag {name:?}"))?;
            out |= *fl;
        }
        Ok(out)
    }
}
