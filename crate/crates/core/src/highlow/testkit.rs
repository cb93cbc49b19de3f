//! Shared fixtures for the module's tests.

use super::prune::{prune, PruneParams, PrunedHierarchy};
use super::{ConvEngine, Frame};
use crate::freq::{CapPartition, FrequencySet};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub(crate) struct Scene {
    pub engine: ConvEngine,
    pub partition: CapPartition,
    pub freq: FrequencySet,
    pub hier: PrunedHierarchy,
}

/// Frame, partition, and pruned hierarchy for a hand-picked set of unit
/// frequencies; the separation factor is derived from the tightest gap.
pub(crate) fn scene(
    side: f64,
    r: f64,
    beta: f64,
    pts: Vec<f64>,
    coeffs: Vec<Complex64>,
    alpha: f64,
) -> Scene {
    let frame = Frame::new(side, 0.5).unwrap();
    let partition = CapPartition::new(r, beta, 1.0 / 3.0).unwrap();
    let n = pts.len();
    let mut gaps: Vec<f64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.push(1.0);
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let sep = (min_gap * n as f64 * 0.999).min(1.0);
    let freq = FrequencySet::new(pts, coeffs, n, sep).unwrap();
    let hier = prune(&frame, &partition, &freq, &PruneParams::standard(alpha)).unwrap();
    Scene { engine: ConvEngine::new(frame), partition, freq, hier }
}

/// Eight fixed well-spread frequencies with seeded random phases.
pub(crate) fn random8(seed: u64) -> (Vec<f64>, Vec<Complex64>) {
    let pts = vec![-0.8, -0.55, -0.35, -0.1, 0.2, 0.4, 0.65, 0.85];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = pts.iter().map(|_| Complex64::from_polar(1.0, rng.gen::<f64>() * TAU)).collect();
    (pts, coeffs)
}
