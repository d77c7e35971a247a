use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Non-fatal events raised while evaluating bounds. Clamping is never silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// A single-photon error-rate bound left [0, 1] and was clamped.
    E1Clamped,
    /// A photon-number fraction bound left [0, 1] and was clamped.
    DeltaClamped,
    /// The single-photon yield bound is zero; no single-photon credit.
    VacuousSinglePhoton,
    /// A QBER left [0, 1] and was clamped (paper-literal QBER model only).
    QberClamped,
    /// The click/no-click ratio ordering claimed for the source does not hold.
    RatioOrderingDiagnostic,
    /// The requested fluctuation exceeds the studied range [0, 0.10].
    BeyondStudiedRange,
    /// The observed click rate carries no intensity information; the full box was scanned.
    SliceFallbackToBox,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::E1Clamped => "e1_clamped",
            Flag::DeltaClamped => "delta_clamped",
            Flag::VacuousSinglePhoton => "vacuous_single_photon",
            Flag::QberClamped => "qber_clamped",
            Flag::RatioOrderingDiagnostic => "ratio_ordering",
            Flag::BeyondStudiedRange => "beyond_studied_range",
            Flag::SliceFallbackToBox => "slice_fallback_to_box",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags(BTreeSet<Flag>);

impl Flags {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&mut self, flag: Flag) {
        self.0.insert(flag);
    }

    pub fn contains(&self, flag: Flag) -> bool {
        self.0.contains(&flag)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn merge(&mut self, other: &Flags) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn iter(&self) -> impl Iterator<Item = Flag> + '_ {
        self.0.iter().copied()
    }

    /// Clamps `value` into `[lo, hi]`, raising `flag` if it had to move.
    pub fn clamp(&mut self, value: f64, lo: f64, hi: f64, flag: Flag) -> f64 {
        if value < lo {
            self.raise(flag);
            lo
        } else if value > hi {
            self.raise(flag);
            hi
        } else {
            value
        }
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for flag in &self.0 {
            if !first {
                f.write_str("|")?;
            }
            f.write_str(flag.as_str())?;
            first = false;
        }
        Ok(())
    }
}
