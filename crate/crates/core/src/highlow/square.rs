//! Square functions of the hierarchy and their frequency split.
//!
//! G collects the finest-level squares smoothed by their cap weights; each
//! coarser level k gets g_k from the regrouped fields entering that level's
//! pruning. Every one of them is split into a low part (spectral cutoff at
//! the width of the next finer level's caps) and a high remainder, and the
//! box is classified cell by cell according to which part dominates first.

use super::cutoff::CutoffBank;
use super::prune::PrunedHierarchy;
use super::weights::WeightKernel;
use super::{ConvEngine, RealGrid};
use crate::freq::CapPartition;
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;

/// One sub-finest level's square function with its low/high split.
#[derive(Debug)]
pub struct LevelSquare {
    /// Index into the partition's level list.
    pub level: usize,
    /// Cap scale of this level.
    pub scale: f64,
    /// Reassembled as `low + high`, so the split is an identity of the
    /// stored values rather than a rounding coincidence.
    pub g: RealGrid,
    pub low: RealGrid,
    pub high: RealGrid,
}

#[derive(Debug)]
pub struct SquareFunctionSet {
    /// Scale parameter of the partition the set was built from.
    pub r: f64,
    pub g_big: RealGrid,
    pub g_big_low: RealGrid,
    pub g_big_high: RealGrid,
    /// Spectral mass of G through each audited dyadic ring: (ring index j
    /// for the band at radius `2^-j`, squared integral of the ring part).
    pub ring_l2: Vec<(i32, f64)>,
    /// Square functions of the levels below the finest, coarse to fine;
    /// `gks[i]` belongs to `hierarchy.levels[i]`.
    pub gks: Vec<LevelSquare>,
}

fn zero(buf: &mut [Complex64]) {
    buf.par_iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
}

/// `a + b` cellwise in storage precision.
fn sum(a: &RealGrid, b: &RealGrid) -> RealGrid {
    let vals = a.vals.par_iter().zip(b.vals.par_iter()).map(|(&x, &y)| x + y).collect();
    RealGrid { n: a.n, h: a.h, vals }
}

/// Accumulates the weighted squares of one hierarchy level into `acc` as a
/// spectral sum of data-spectrum times kernel-spectrum products.
fn accumulate_level(
    engine: &ConvEngine,
    level: &super::prune::PrunedLevel,
    acc: &mut [Complex64],
    dbuf: &mut Vec<Complex64>,
    kbuf: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
) {
    for cap in &level.caps {
        let mut kern = WeightKernel::for_cap(level.scale, cap.center_xi);
        kern.spectrum_into(engine, kbuf, scratch);
        engine.spectrum_of_real(&cap.sq_pre, dbuf, scratch);
        ConvEngine::accumulate_product(acc, dbuf, kbuf, engine.frame.h);
    }
}

/// Builds every square function of a pruned hierarchy.
///
/// The finest level contributes G from its raw squares; each coarser level
/// i contributes g from the squares of the fields entering its pruning,
/// low-passed at the width of level i+1's caps.
pub fn square_functions(
    engine: &ConvEngine,
    partition: &CapPartition,
    hier: &PrunedHierarchy,
) -> Result<SquareFunctionSet> {
    if hier.levels.is_empty() {
        return Err(Error::InvalidParameter("hierarchy has no levels".into()));
    }
    let bank = CutoffBank::new(partition.r, partition.beta);
    let n_levels = hier.levels.len();

    let mut acc = engine.alloc();
    let mut dbuf = engine.alloc();
    let mut kbuf = engine.alloc();
    let mut scratch = engine.alloc();
    let mut work = engine.alloc();

    // G and its split, plus the ring masses the high audit reads
    let finest = hier.levels.last().expect("nonempty");
    accumulate_level(engine, finest, &mut acc, &mut dbuf, &mut kbuf, &mut scratch);

    let mut ring_l2 = Vec::new();
    for j in bank.audit_ring_indices() {
        work.copy_from_slice(&acc);
        engine.apply_multiplier(&mut work, |t| bank.ring(j, t));
        ring_l2.push((j, engine.spectral_l2(&work)));
    }

    // split the spectrum itself: the stored high part then carries nothing
    // below the cutoff beyond transform rounding
    work.copy_from_slice(&acc);
    engine.apply_multiplier(&mut work, |t| bank.coarse(t));
    let g_big_low = engine.finish_conv(&work, &mut scratch);
    acc.par_iter_mut().zip(work.par_iter()).for_each(|(a, w)| *a -= *w);
    let g_big_high = engine.finish_conv(&acc, &mut scratch);
    let g_big = sum(&g_big_low, &g_big_high);

    let mut gks = Vec::with_capacity(n_levels.saturating_sub(1));
    for i in 0..n_levels - 1 {
        let lv = &hier.levels[i];
        zero(&mut acc);
        accumulate_level(engine, lv, &mut acc, &mut dbuf, &mut kbuf, &mut scratch);
        let next_scale = partition.tau_levels[i + 1].scale;
        work.copy_from_slice(&acc);
        engine.apply_multiplier(&mut work, |t| bank.level_cutoff(next_scale, t));
        let low = engine.finish_conv(&work, &mut scratch);
        acc.par_iter_mut().zip(work.par_iter()).for_each(|(a, w)| *a -= *w);
        let high = engine.finish_conv(&acc, &mut scratch);
        let g = sum(&low, &high);
        gks.push(LevelSquare { level: lv.level, scale: lv.scale, g, low, high });
    }

    Ok(SquareFunctionSet { r: partition.r, g_big, g_big_low, g_big_high, ring_l2, gks })
}

/// Cell labels after sorting the box by dominance.
#[derive(Debug)]
pub struct RegionDecomposition {
    /// One label per cell: `0` is the high set, `1 + i` marks the set where
    /// level `gks[i]` is the first non-low one walking fine to coarse,
    /// `1 + gks.len()` is the all-low set, `u8::MAX` is the remainder where
    /// rounding left a cell without a dominant part.
    pub labels: Vec<u8>,
    pub n_sub: usize,
    pub count_high: usize,
    /// Cell counts per `gks` index.
    pub count_omega: Vec<usize>,
    pub count_low: usize,
    pub count_remainder: usize,
}

pub const LABEL_REMAINDER: u8 = u8::MAX;

impl RegionDecomposition {
    pub fn label_high() -> u8 {
        0
    }

    pub fn label_omega(&self, i: usize) -> u8 {
        assert!(i < self.n_sub);
        1 + i as u8
    }

    pub fn label_low(&self) -> u8 {
        1 + self.n_sub as u8
    }

    pub fn total(&self) -> usize {
        self.count_high + self.count_omega.iter().sum::<usize>() + self.count_low
            + self.count_remainder
    }
}

/// Sorts every cell of the box by which part of which square function
/// dominates: high at the top scale, else the first level (fine to coarse)
/// whose low part loses, else low everywhere.
pub fn classify_regions(set: &SquareFunctionSet) -> RegionDecomposition {
    let n_sub = set.gks.len();
    let cells = set.g_big.vals.len();
    let labels: Vec<u8> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let g = set.g_big.vals[c];
            let gh = set.g_big_high.vals[c];
            if g <= 2.0 * gh.abs() {
                return 0u8;
            }
            for i in (0..n_sub).rev() {
                let gi = set.gks[i].g.vals[c];
                let lo = set.gks[i].low.vals[c];
                if gi <= 2.0 * lo.abs() {
                    continue;
                }
                let hi = set.gks[i].high.vals[c];
                // both parts losing at once is arithmetically impossible up
                // to a rounding ulp; such cells land in the remainder
                return if gi <= 2.0 * hi.abs() { 1 + i as u8 } else { LABEL_REMAINDER };
            }
            1 + n_sub as u8
        })
        .collect();

    let low_label = 1 + n_sub as u8;
    let (count_high, count_low, count_remainder) = labels
        .par_iter()
        .fold(
            || (0usize, 0usize, 0usize),
            |(h, l, r), &lab| {
                if lab == 0 {
                    (h + 1, l, r)
                } else if lab == low_label {
                    (h, l + 1, r)
                } else if lab == LABEL_REMAINDER {
                    (h, l, r + 1)
                } else {
                    (h, l, r)
                }
            },
        )
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let count_omega: Vec<usize> = (0..n_sub)
        .map(|i| {
            let lab = 1 + i as u8;
            labels.par_iter().filter(|&&l| l == lab).count()
        })
        .collect();

    RegionDecomposition { labels, n_sub, count_high, count_omega, count_low, count_remainder }
}
