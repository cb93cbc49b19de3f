//! Numerical laboratory for exponential sums with frequencies on the
//! parabola: superlevel-set measurement, cap geometry on the frequency
//! side, major-arc extremizers, square-function (high/low) audits, and
//! bilinear quadruple counting, plus a deterministic sweep runner.

pub mod arcs;
pub mod bilinear;
pub mod extremal;
pub mod field;
pub mod freq;
pub mod grid;
pub mod highlow;
pub mod report;
pub mod sweep;

pub use field::SampledField;
pub use freq::{ActiveSet, CapPartition, DistributionProfile, FrequencySet};
pub use grid::Rect;

/// Hard ceiling on any single allocation plan; larger requests are refused
/// with [`Error::MemoryBudget`] so sweeps can record a skip instead of
/// thrashing the machine.
pub const MEMORY_BUDGET_BYTES: u64 = 4 << 30;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid spacing {spacing} too coarse for band limit {band}: need spacing <= 1/(4 band)")]
    Aliasing { spacing: f64, band: f64 },
    #[error("frequency set is empty")]
    EmptyFrequencySet,
    #[error("frequency separation {got:.3e} below required {need:.3e}")]
    Separation { got: f64, need: f64 },
    #[error("frequencies must be strictly increasing and lie in [-1, 1]")]
    BadFrequencies,
    #[error("coefficient bound exceeded: |a| = {0} > 1")]
    CoefficientBound(f64),
    #[error("scale out of range: {0}")]
    ScaleRange(String),
    #[error("caps are adjacent or overlapping; a separated pair is required")]
    AdjacentCaps,
    #[error("region does not intersect the sampled grid")]
    EmptyRegion,
    #[error("memory budget exceeded: need {need} bytes, budget {budget}")]
    MemoryBudget { need: u64, budget: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
