//! Bilinear counting over separated cap pairs.
//!
//! Three pieces share this module: an exact-arithmetic count of resonant
//! block quadruples (the support-overlap test behind the product-of-two-
//! caps inequality), grid-level broad sets and the product inequality
//! audit, and the K-adic broad/narrow decomposition of a field into a
//! single-cap maximum plus separated pair products.

use crate::freq::FrequencySet;
use crate::grid::chunked_sum;
use crate::highlow::{eval_cap_field, ConvEngine, FieldGrid, Frame, RealGrid, WeightKernel};
use crate::report::AuditReport;
use crate::{Error, Result};
use num_complex::Complex64;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

type Q = Ratio<i128>;

/// Exact rational value of a finite float. Every finite `f64` is a dyadic
/// rational; values needing denominators past 2^64 are rejected.
fn dyadic(x: f64) -> Result<Q> {
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!("{x} is not finite")));
    }
    let mut num = x;
    let mut den: i128 = 1;
    for _ in 0..64 {
        if num.fract() == 0.0 {
            return Ok(Ratio::new(num as i128, den));
        }
        num *= 2.0;
        den *= 2;
    }
    Err(Error::InvalidParameter(format!("{x} has no small dyadic form")))
}

/// Uniform split of `[-1, 1]` into `2m` closed blocks of width `1/m`,
/// with `m = ceil(sqrt(S))`: the block layout for separation scale `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub m: u32,
}

impl BlockGrid {
    pub fn for_scale(s: f64) -> Result<Self> {
        if !(s >= 4.0) {
            return Err(Error::InvalidParameter(format!("scale {s} below 4")));
        }
        Ok(BlockGrid { m: s.sqrt().ceil() as u32 })
    }

    pub fn len(&self) -> u32 {
        2 * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn lo(&self, i: u32) -> Q {
        Ratio::new(i as i128 - self.m as i128, self.m as i128)
    }

    fn hi(&self, i: u32) -> Q {
        self.lo(i + 1)
    }

    fn center(&self, i: u32) -> Q {
        Ratio::new(2 * (i as i128) + 1 - 2 * self.m as i128, 2 * self.m as i128)
    }

    pub fn interval_f64(&self, i: u32) -> (f64, f64) {
        let m = self.m as f64;
        (i as f64 / m - 1.0, (i + 1) as f64 / m - 1.0)
    }

    /// Block holding `xi`, right edge going to the upper block, last block
    /// closed; `None` outside `[-1, 1]`.
    pub fn index_of(&self, xi: f64) -> Option<u32> {
        if !(-1.0..=1.0).contains(&xi) {
            return None;
        }
        let i = ((xi + 1.0) * self.m as f64).floor() as i64;
        Some((i.clamp(0, self.len() as i64 - 1)) as u32)
    }

    /// Indices of blocks whose closed interval meets the closed `[lo, hi]`.
    fn meeting(&self, lo: Q, hi: Q) -> Vec<u32> {
        (0..self.len()).filter(|&i| self.lo(i) <= hi && lo <= self.hi(i)).collect()
    }
}

/// min and max of `ξ²` over a closed interval, zero crossing included.
fn sq_range(lo: Q, hi: Q) -> (Q, Q) {
    let (a, b) = (lo * lo, hi * hi);
    let top = a.max(b);
    let bottom = if lo <= Ratio::from_integer(0) && Ratio::from_integer(0) <= hi {
        Ratio::from_integer(0)
    } else {
        a.min(b)
    };
    (bottom, top)
}

/// Exact box bounding `{(ξ−ξ′, ξ²−ξ′²)}` over a block pair.
#[derive(Debug, Clone, Copy)]
struct DiffBox {
    x_lo: Q,
    x_hi: Q,
    y_lo: Q,
    y_hi: Q,
}

fn diff_box(g: &BlockGrid, i: u32, j: u32) -> DiffBox {
    let (si_lo, si_hi) = sq_range(g.lo(i), g.hi(i));
    let (sj_lo, sj_hi) = sq_range(g.lo(j), g.hi(j));
    DiffBox {
        x_lo: g.lo(i) - g.hi(j),
        x_hi: g.hi(i) - g.lo(j),
        y_lo: si_lo - sj_hi,
        y_hi: si_hi - sj_lo,
    }
}

/// Whether box `a` meets the `pad`-thickened box `b` (closed, both axes),
/// the support-overlap relation on Minkowski-difference boxes.
fn boxes_meet(a: &DiffBox, b: &DiffBox, pad: Q) -> bool {
    a.x_lo <= b.x_hi + pad
        && b.x_lo - pad <= a.x_hi
        && a.y_lo <= b.y_hi + pad
        && b.y_lo - pad <= a.y_hi
}

/// Count of passing `(θ₂, θ₂′)` choices for one `(θ₁, θ₁′)` anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairQuadruples {
    pub theta1: u32,
    pub theta1_prime: u32,
    pub count: usize,
}

/// Exhaustive resonance count for one `(S, D)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadrupleCount {
    pub s: f64,
    pub d: f64,
    pub tau_blocks: Vec<u32>,
    pub tau_prime_blocks: Vec<u32>,
    pub pair_counts: Vec<PairQuadruples>,
    pub total: usize,
    /// Worst `|center−center| · D · √S` over passing tuples, either side.
    pub worst_distance_constant: f64,
    /// Distance-law constant actually reported: max of the seed and the
    /// measured worst.
    pub fitted_c: f64,
    /// Worst per-anchor count times `D`.
    pub fitted_c_prime: f64,
    pub pass: bool,
}

/// Starting value for the distance-law constant fit.
pub const DISTANCE_SEED: f64 = 8.0;
/// A passing tuple needing more than this fails the count outright.
pub const DISTANCE_CEILING: f64 = 16.0;
/// Width of each of the two separated frequency intervals.
pub const TAU_WIDTH: f64 = 0.5;

/// Enumerates every `(θ₁, θ₂, θ₁′, θ₂′)` with the first two blocks meeting
/// `τ = [−D/2 − 1/2, −D/2]` and the last two meeting the mirrored `τ′`,
/// keeping tuples whose difference boxes pass the thickened overlap test.
/// All geometry is exact rational arithmetic; the thickening is `1/⌊√S⌋`,
/// which equals the nominal `S^{−1/2}` whenever `S` is a perfect square
/// and is slightly larger (conservative) otherwise.
pub fn count_resonant_quadruples(s: f64, d: f64) -> Result<QuadrupleCount> {
    let grid = BlockGrid::for_scale(s)?;
    if !(d <= 0.5 && d * d * s >= 1.0 - 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "separation {d} outside [S^-1/2, 1/2] for S = {s}"
        )));
    }
    let dq = dyadic(d)?;
    let wq = dyadic(TAU_WIDTH)?;
    let two = Ratio::from_integer(2);
    let tau = (-dq / two - wq, -dq / two);
    let tau_p = (dq / two, dq / two + wq);
    let tau_blocks = grid.meeting(tau.0, tau.1);
    let tau_prime_blocks = grid.meeting(tau_p.0, tau_p.1);
    let pad = Ratio::new(1, s.sqrt().floor() as i128);

    let anchors: Vec<(u32, u32)> = tau_blocks
        .iter()
        .flat_map(|&i1| tau_prime_blocks.iter().map(move |&i1p| (i1, i1p)))
        .collect();
    let per_anchor: Vec<(PairQuadruples, f64)> = anchors
        .par_iter()
        .map(|&(i1, i1p)| {
            let mut count = 0usize;
            let mut worst = 0.0f64;
            for &i2 in &tau_blocks {
                let a = diff_box(&grid, i1, i2);
                let c1 = block_gap(&grid, i1, i2) * d * s.sqrt();
                for &i2p in &tau_prime_blocks {
                    let b = diff_box(&grid, i1p, i2p);
                    if boxes_meet(&a, &b, pad) {
                        count += 1;
                        let c2 = block_gap(&grid, i1p, i2p) * d * s.sqrt();
                        worst = worst.max(c1).max(c2);
                    }
                }
            }
            (PairQuadruples { theta1: i1, theta1_prime: i1p, count }, worst)
        })
        .collect();

    let total = per_anchor.iter().map(|(p, _)| p.count).sum();
    let worst_distance_constant =
        per_anchor.iter().map(|&(_, w)| w).fold(0.0f64, f64::max);
    let fitted_c_prime = per_anchor
        .iter()
        .map(|(p, _)| p.count as f64 * d)
        .fold(0.0f64, f64::max);
    let pass = worst_distance_constant <= DISTANCE_CEILING;
    Ok(QuadrupleCount {
        s,
        d,
        tau_blocks,
        tau_prime_blocks,
        pair_counts: per_anchor.into_iter().map(|(p, _)| p).collect(),
        total,
        worst_distance_constant,
        fitted_c: DISTANCE_SEED.max(worst_distance_constant),
        fitted_c_prime,
        pass,
    })
}

/// Exact center distance, reported as a float.
fn block_gap(g: &BlockGrid, i: u32, j: u32) -> f64 {
    let diff = g.center(i) - g.center(j);
    (*diff.numer() as f64 / *diff.denom() as f64).abs()
}

impl QuadrupleCount {
    /// Per-anchor counts as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# schema={}\ns,d,theta1,theta1_prime,count\n",
            crate::report::SCHEMA_VERSION
        );
        for p in &self.pair_counts {
            let _ = writeln!(out, "{},{},{},{},{}", self.s, self.d, p.theta1, p.theta1_prime, p.count);
        }
        out
    }
}

/// Boolean cell set over an `n × n` frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMask {
    pub n: usize,
    pub cells: Vec<bool>,
    pub count: usize,
}

impl CellMask {
    pub fn from_cells(n: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), n * n);
        let count = cells.iter().filter(|&&b| b).count();
        CellMask { n, cells, count }
    }

    pub fn empty(n: usize) -> Self {
        CellMask { n, cells: vec![false; n * n], count: 0 }
    }

    pub fn full(n: usize) -> Self {
        CellMask { n, cells: vec![true; n * n], count: n * n }
    }
}

/// Cells within Euclidean distance `radius` (in cell units) of any set
/// cell; row prefix counts make each row shift a window lookup.
pub fn dilate_disk(mask: &CellMask, radius: f64) -> CellMask {
    let n = mask.n;
    let r = radius.max(0.0).floor() as i64;
    let mut prefix = vec![0u32; n * (n + 1)];
    for y in 0..n {
        let row = &mask.cells[y * n..(y + 1) * n];
        let pre = &mut prefix[y * (n + 1)..(y + 1) * (n + 1)];
        for x in 0..n {
            pre[x + 1] = pre[x] + row[x] as u32;
        }
    }
    let any_in = |y: i64, x_lo: i64, x_hi: i64| -> bool {
        if y < 0 || y >= n as i64 {
            return false;
        }
        let lo = x_lo.clamp(0, n as i64) as usize;
        let hi = (x_hi + 1).clamp(0, n as i64) as usize;
        let pre = &prefix[y as usize * (n + 1)..(y as usize + 1) * (n + 1)];
        pre[hi] > pre[lo]
    };
    let cells: Vec<bool> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % n) as i64, (idx / n) as i64);
            (-r..=r).any(|dy| {
                let w = ((radius * radius - (dy * dy) as f64).max(0.0)).sqrt().floor() as i64;
                any_in(y + dy, x - w, x + w)
            })
        })
        .collect();
    CellMask::from_cells(n, cells)
}

fn check_separated_pair(tau: (f64, f64), tau_p: (f64, f64)) -> Result<()> {
    let (len_a, len_b) = (tau.1 - tau.0, tau_p.1 - tau_p.0);
    if !(len_a > 0.0 && len_b > 0.0) {
        return Err(Error::InvalidParameter("degenerate cap interval".into()));
    }
    if (len_a - len_b).abs() > 1e-9 * len_a.max(len_b) {
        return Err(Error::InvalidParameter(format!(
            "cap lengths differ: {len_a} vs {len_b}"
        )));
    }
    let gap = (tau_p.0 - tau.1).max(tau.0 - tau_p.1);
    if gap < 0.999 * len_a {
        return Err(Error::AdjacentCaps);
    }
    Ok(())
}

/// Cells where the pair product sits at level `alpha` (within a factor of
/// two of `√|f_τ f_τ′|`) while neither factor towers over it (their sum
/// stays under `K^c · alpha`).
pub fn broad_set(
    f_tau: &FieldGrid,
    f_tau_p: &FieldGrid,
    tau: (f64, f64),
    tau_p: (f64, f64),
    alpha: f64,
    k: f64,
    c: f64,
) -> Result<CellMask> {
    check_separated_pair(tau, tau_p)?;
    if !(alpha > 0.0) || !(k >= 2.0) {
        return Err(Error::InvalidParameter(format!("need alpha > 0 and K >= 2, got {alpha}, {k}")));
    }
    if f_tau.vals.len() != f_tau_p.vals.len() {
        return Err(Error::InvalidParameter("mismatched grids".into()));
    }
    let dominate = k.powf(c) * alpha;
    let n = (f_tau.vals.len() as f64).sqrt().round() as usize;
    let cells: Vec<bool> = f_tau
        .vals
        .par_iter()
        .zip(f_tau_p.vals.par_iter())
        .map(|(a, b)| {
            let (ma, mb) = (a.norm(), b.norm());
            let geo = (ma * mb).sqrt();
            geo >= 0.5 * alpha && geo <= 2.0 * alpha && ma + mb <= dominate
        })
        .collect();
    Ok(CellMask::from_cells(n, cells))
}

/// Evaluates the product inequality on a mask: the measured side is
/// `∫_X |f_τ|² |f_τ′|²`, the bound side `D⁻² ∫_{N_√S(X)} (Σ_θ |f_θ|² ∗ w)²`
/// with `w` a unit-mass window of radius `√S`, both on the frame's grid.
pub fn audit_bilinear(
    engine: &ConvEngine,
    freq: &FrequencySet,
    tau: (f64, f64),
    tau_p: (f64, f64),
    s: f64,
    d: f64,
    x_mask: &CellMask,
) -> Result<AuditReport> {
    let start = Instant::now();
    let grid = BlockGrid::for_scale(s)?;
    if !(d > 0.0 && d <= 0.5) {
        return Err(Error::InvalidParameter(format!("separation {d} outside (0, 1/2]")));
    }
    let gap = (tau_p.0 - tau.1).max(tau.0 - tau_p.1);
    if gap < d - 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "intervals only {gap} apart, need {d}"
        )));
    }
    let frame = &engine.frame;
    if x_mask.n != frame.n {
        return Err(Error::InvalidParameter("mask does not match the frame".into()));
    }

    // group frequencies into blocks and build the per-block fields
    let mut by_block: BTreeMap<u32, (Vec<f64>, Vec<Complex64>)> = BTreeMap::new();
    for (&p, &c) in freq.points().iter().zip(freq.coeffs()) {
        let i = grid.index_of(p).ok_or_else(|| {
            Error::InvalidParameter(format!("frequency {p} outside [-1, 1]"))
        })?;
        let e = by_block.entry(i).or_default();
        e.0.push(p);
        e.1.push(c);
    }
    let fields: BTreeMap<u32, FieldGrid> = by_block
        .iter()
        .map(|(&i, (pts, cfs))| (i, eval_cap_field(frame, pts, cfs)))
        .collect();

    let in_interval = |i: u32, iv: (f64, f64)| -> bool {
        let (lo, hi) = grid.interval_f64(i);
        lo <= iv.1 && iv.0 <= hi
    };
    let mut f_tau = FieldGrid::zeros(frame);
    let mut f_tau_p = FieldGrid::zeros(frame);
    let mut n_tau = 0usize;
    let mut n_tau_p = 0usize;
    for (&i, g) in &fields {
        if in_interval(i, tau) {
            f_tau.add_assign(g);
            n_tau += 1;
        }
        if in_interval(i, tau_p) {
            f_tau_p.add_assign(g);
            n_tau_p += 1;
        }
    }

    let h2 = frame.cell_area();
    let cells = frame.n * frame.n;
    let measured = h2
        * chunked_sum(cells, |range| {
            range
                .filter(|&i| x_mask.cells[i])
                .map(|i| f_tau.vals[i].norm_sqr() * f_tau_p.vals[i].norm_sqr())
                .sum()
        });

    // square-function side: sum the block squares, smooth at radius √S
    let mut sq_sum = RealGrid::zeros(frame);
    for g in fields.values() {
        sq_sum
            .vals
            .par_iter_mut()
            .zip(g.vals.par_iter())
            .for_each(|(s, z)| *s += z.norm_sqr() as f32);
    }
    let mut kern = WeightKernel::ball(s.sqrt());
    let mut kbuf = engine.alloc();
    let mut scratch = engine.alloc();
    kern.spectrum_into(engine, &mut kbuf, &mut scratch);
    let mut dbuf = engine.alloc();
    engine.spectrum_of_real(&sq_sum, &mut dbuf, &mut scratch);
    let mut acc = engine.alloc();
    ConvEngine::accumulate_product(&mut acc, &dbuf, &kbuf, frame.h);
    let smooth = engine.finish_conv(&acc, &mut scratch);

    let window = dilate_disk(x_mask, s.sqrt() / frame.h);
    let bound_integral = h2
        * chunked_sum(cells, |range| {
            range
                .filter(|&i| window.cells[i])
                .map(|i| {
                    let v = smooth.vals[i] as f64;
                    v * v
                })
                .sum()
        });
    let bound = bound_integral / (d * d);
    let fitted_constant = if bound > 0.0 {
        measured / bound
    } else if measured == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };

    let mut parameters = BTreeMap::new();
    parameters.insert("s".into(), s);
    parameters.insert("d".into(), d);
    parameters.insert("cells_x".into(), x_mask.count as f64);
    parameters.insert("cells_window".into(), window.count as f64);
    parameters.insert("blocks_tau".into(), n_tau as f64);
    parameters.insert("blocks_tau_prime".into(), n_tau_p as f64);
    Ok(AuditReport {
        name: "bilinear_restriction".into(),
        parameters,
        measured,
        bound,
        fitted_constant,
        growth_exponent: None,
        pass: fitted_constant.is_finite(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One separated same-parent pair the decomposition tracks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BroadPiece {
    /// Parent half-width: 1 for the root, shrinking by the branching
    /// factor per level.
    pub delta: f64,
    pub tau: (f64, f64),
    pub tau_prime: (f64, f64),
    /// Greatest `√|f_τ f_τ′|` over the grid.
    pub sup_geo_mean: f64,
}

/// Outcome of the sampled pointwise check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchCheck {
    pub cells_checked: usize,
    pub narrow_attained: usize,
    pub broad_attained: usize,
    /// Worst `|f|` over the assembled right-hand side; at most 1 up to
    /// rounding when the constants are admissible.
    pub worst_ratio: f64,
}

pub struct BroadNarrowDecomposition {
    pub k: f64,
    pub c: f64,
    /// Levels of subdivision until caps reach width `R^{-1/2}`.
    pub m: usize,
    /// Children per cap: `ceil(K)`.
    pub branching: usize,
    /// Cellwise `max_θ |f_θ|` over the finest caps.
    pub narrow: RealGrid,
    pub pieces: Vec<BroadPiece>,
    pub check: BranchCheck,
}

/// Caps at one level holding at least one frequency, with their fields.
struct LevelCaps {
    caps: Vec<(usize, (f64, f64), FieldGrid)>,
}

fn build_level(frame: &Frame, freq: &FrequencySet, n_caps: usize) -> LevelCaps {
    let width = 2.0 / n_caps as f64;
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<Complex64>)> = BTreeMap::new();
    for (&p, &c) in freq.points().iter().zip(freq.coeffs()) {
        let i = (((p + 1.0) / width).floor() as i64).clamp(0, n_caps as i64 - 1) as usize;
        let e = groups.entry(i).or_default();
        e.0.push(p);
        e.1.push(c);
    }
    let caps = groups
        .into_iter()
        .map(|(i, (pts, cfs))| {
            let lo = -1.0 + i as f64 * width;
            (i, (lo, lo + width), eval_cap_field(frame, &pts, &cfs))
        })
        .collect();
    LevelCaps { caps }
}

/// Splits a field into the iterated narrow maximum plus separated pair
/// products: `|f| ≤ c^m · max_θ |f_θ| + c^m K^c · Σ_levels max_pairs
/// √|f_τ f_τ′|`, with pairs drawn from nonadjacent children of a common
/// parent. The inequality is re-checked cellwise on a sample.
pub fn broad_narrow_decompose(
    frame: &Frame,
    freq: &FrequencySet,
    r: f64,
    k: f64,
    c: f64,
) -> Result<BroadNarrowDecomposition> {
    if !(k >= 2.0) {
        return Err(Error::InvalidParameter(format!("K = {k} below 2")));
    }
    if !(c >= 3.0) {
        return Err(Error::InvalidParameter(format!(
            "universal constant {c} below 3; the cap-count bound needs at least 3"
        )));
    }
    if !(r > 1.0) {
        return Err(Error::ScaleRange(format!("R = {r}")));
    }
    let branching = k.ceil() as usize;
    let target = r.sqrt();
    let mut m = 1usize;
    while (branching as f64).powi(m as i32) < target {
        m += 1;
    }

    // levels[j] holds the caps after j+1 subdivisions: branching^(j+1)
    // caps across [-1, 1]
    let levels: Vec<LevelCaps> =
        (1..=m).map(|j| build_level(frame, freq, branching.pow(j as u32))).collect();

    let cells = frame.n * frame.n;
    let finest = &levels[m - 1];
    let mut narrow = RealGrid::zeros(frame);
    for (_, _, g) in &finest.caps {
        narrow
            .vals
            .par_iter_mut()
            .zip(g.vals.par_iter())
            .for_each(|(acc, z)| *acc = acc.max(z.norm() as f32));
    }

    let mut pieces = Vec::new();
    for (j, level) in levels.iter().enumerate() {
        let delta = (branching as f64).powi(-(j as i32));
        for (a_pos, &(ia, iv_a, ref ga)) in level.caps.iter().enumerate() {
            for &(ib, iv_b, ref gb) in level.caps.iter().skip(a_pos + 1) {
                if ia / branching != ib / branching || ib - ia < 2 {
                    continue;
                }
                let sup = chunked_sum(cells, |range| {
                    range
                        .map(|i| (ga.vals[i].norm() * gb.vals[i].norm()).sqrt())
                        .fold(0.0f64, f64::max)
                });
                pieces.push(BroadPiece {
                    delta,
                    tau: iv_a,
                    tau_prime: iv_b,
                    sup_geo_mean: sup,
                });
            }
        }
    }

    let check = verify_branches(frame, freq, &levels, branching, k, c, m)?;
    Ok(BroadNarrowDecomposition { k, c, m, branching, narrow, pieces, check })
}

fn verify_branches(
    frame: &Frame,
    freq: &FrequencySet,
    levels: &[LevelCaps],
    branching: usize,
    k: f64,
    c: f64,
    m: usize,
) -> Result<BranchCheck> {
    let full = eval_cap_field(frame, freq.points(), freq.coeffs());
    let cells = frame.n * frame.n;
    let stride = (cells / 16384).max(1);
    let cm = c.powi(m as i32);
    let kc = k.powf(c);
    let finest = &levels[m - 1];

    let per_cell: Vec<(f64, bool)> = (0..cells)
        .into_par_iter()
        .step_by(stride)
        .map(|i| {
            let target = full.vals[i].norm();
            let narrow_val =
                finest.caps.iter().map(|(_, _, g)| g.vals[i].norm()).fold(0.0f64, f64::max);
            let mut pair_sum = 0.0f64;
            let mut best_pair = 0.0f64;
            for level in levels {
                let mut level_max = 0.0f64;
                for (a_pos, &(ia, _, ref ga)) in level.caps.iter().enumerate() {
                    for &(ib, _, ref gb) in level.caps.iter().skip(a_pos + 1) {
                        if ia / branching != ib / branching || ib - ia < 2 {
                            continue;
                        }
                        let geo = (ga.vals[i].norm() * gb.vals[i].norm()).sqrt();
                        level_max = level_max.max(geo);
                    }
                }
                pair_sum += level_max;
                best_pair = best_pair.max(level_max);
            }
            let rhs = cm * narrow_val + cm * kc * pair_sum;
            let ratio = if rhs > 0.0 {
                target / rhs
            } else if target == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            // attained: the branch alone carries its fair share of |f|
            let share = target / (m as f64 + 1.0);
            let narrow_attains = cm * narrow_val >= share;
            (ratio, narrow_attains || target == 0.0)
        })
        .collect();

    let cells_checked = per_cell.len();
    let narrow_attained = per_cell.iter().filter(|&&(_, n)| n).count();
    let worst_ratio = per_cell.iter().map(|&(r, _)| r).fold(0.0f64, f64::max);
    Ok(BranchCheck {
        cells_checked,
        narrow_attained,
        broad_attained: cells_checked - narrow_attained,
        worst_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn ratio(n: i128, d: i128) -> Q {
        Ratio::new(n, d)
    }

    #[test]
    fn dyadic_floats_convert_exactly() {
        assert_eq!(dyadic(0.5).unwrap(), ratio(1, 2));
        assert_eq!(dyadic(-0.375).unwrap(), ratio(-3, 8));
        assert_eq!(dyadic(3.0).unwrap(), ratio(3, 1));
        assert_eq!(dyadic(0.3).unwrap() * ratio(1 << 54, 1), ratio((0.3f64 * (1u64 << 54) as f64) as i128, 1));
    }

    #[test]
    fn table_example_fits_the_distance_law() {
        let q = count_resonant_quadruples(16.0, 0.5).unwrap();
        assert!(q.pass);
        assert!(q.total > 0);
        assert!(
            q.worst_distance_constant <= 8.0,
            "worst {}",
            q.worst_distance_constant
        );
        assert_eq!(q.fitted_c, 8.0);
        // identical-block tuples have zero difference boxes, which always
        // meet their own neighborhood, so no anchor can count zero
        assert!(q.pair_counts.iter().all(|p| p.count >= 1));
        assert_eq!(
            q.pair_counts.len(),
            q.tau_blocks.len() * q.tau_prime_blocks.len()
        );
    }

    #[test]
    fn per_anchor_rate_is_stable_in_scale() {
        // the widest separation admits every scale, so it anchors the
        // cross-scale comparison
        let a = count_resonant_quadruples(16.0, 0.5).unwrap();
        let b = count_resonant_quadruples(64.0, 0.5).unwrap();
        assert!(a.pass && b.pass);
        assert!(
            b.fitted_c_prime <= 2.0 * a.fitted_c_prime,
            "{} vs {}",
            b.fitted_c_prime,
            a.fitted_c_prime
        );
        // tighter separation: S = 16 sits at the degenerate corner
        // D = S^{-1/2} where the windows swallow the whole table, so the
        // genuine rate is read from 64 on
        let c = count_resonant_quadruples(64.0, 0.25).unwrap();
        let d = count_resonant_quadruples(256.0, 0.25).unwrap();
        assert!(
            d.fitted_c_prime <= 2.0 * c.fitted_c_prime,
            "{} vs {}",
            d.fitted_c_prime,
            c.fitted_c_prime
        );
    }

    #[test]
    fn parameter_range_is_enforced() {
        assert!(count_resonant_quadruples(2.0, 0.5).is_err());
        assert!(count_resonant_quadruples(16.0, 0.6).is_err());
        // D below S^{-1/2}
        assert!(count_resonant_quadruples(16.0, 0.125).is_err());
    }

    #[test]
    fn block_centers_obey_the_exact_mean_value_identity() {
        let g = BlockGrid::for_scale(16.0).unwrap();
        let two = Ratio::from_integer(2);
        for i in 0..g.len() {
            for j in 0..g.len() {
                let (ci, cj) = (g.center(i), g.center(j));
                let mid = (ci + cj) / two;
                assert_eq!(ci * ci - cj * cj, two * mid * (ci - cj));
                assert!(mid >= ci.min(cj) && mid <= ci.max(cj));
            }
        }
    }

    #[test]
    fn csv_lists_one_row_per_anchor() {
        let q = count_resonant_quadruples(16.0, 0.5).unwrap();
        let csv = q.to_csv();
        assert!(csv.starts_with("# schema=1\ns,d,theta1,theta1_prime,count\n"));
        assert_eq!(csv.lines().count(), 2 + q.pair_counts.len());
    }

    fn two_cap_fields(side: f64, seed: u64) -> (Frame, FieldGrid, FieldGrid) {
        let frame = Frame::new(side, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = |lo: f64| {
            let pts: Vec<f64> = (0..3).map(|i| lo + 0.02 + 0.03 * i as f64).collect();
            let cfs: Vec<Complex64> = (0..3)
                .map(|_| Complex64::from_polar(1.0, rng.gen::<f64>() * TAU))
                .collect();
            eval_cap_field(&frame, &pts, &cfs)
        };
        let f_a = field(-0.5);
        let f_b = field(0.3);
        (frame, f_a, f_b)
    }

    #[test]
    fn empty_factor_empties_the_broad_set() {
        let (frame, f_a, _) = two_cap_fields(16.0, 3);
        let zero = FieldGrid::zeros(&frame);
        let mask =
            broad_set(&f_a, &zero, (-0.5, -0.375), (0.3, 0.425), 1.0, 4.0, 4.0).unwrap();
        assert_eq!(mask.count, 0);
    }

    #[test]
    fn matched_constant_fields_fill_the_broad_set() {
        let frame = Frame::new(16.0, 0.5).unwrap();
        let alpha = 0.7;
        let a = Complex64::new(alpha, 0.0);
        let f_a = eval_cap_field(&frame, &[-0.4], &[a]);
        let f_b = eval_cap_field(&frame, &[0.4], &[a]);
        // modulus alpha on both sides: the product sits at level alpha
        // and the sum 2 alpha clears the domination constant K^c = 4
        let mask = broad_set(&f_a, &f_b, (-0.5, -0.375), (0.3, 0.425), alpha, 2.0, 2.0).unwrap();
        assert_eq!(mask.count, frame.n * frame.n);
    }

    #[test]
    fn adjacent_caps_are_rejected() {
        let (_, f_a, f_b) = two_cap_fields(16.0, 4);
        let err = broad_set(&f_a, &f_b, (-0.5, -0.375), (-0.375, -0.25), 1.0, 4.0, 4.0);
        assert!(matches!(err, Err(Error::AdjacentCaps)));
    }

    #[test]
    fn broad_set_agrees_with_a_cellwise_recheck() {
        let (frame, f_a, f_b) = two_cap_fields(32.0, 11);
        let (alpha, k, c) = (0.8, 3.0, 4.0);
        let mask = broad_set(&f_a, &f_b, (-0.5, -0.375), (0.3, 0.425), alpha, k, c).unwrap();
        let mut expect = 0usize;
        for i in 0..frame.n * frame.n {
            let (ma, mb) = (f_a.vals[i].norm(), f_b.vals[i].norm());
            let geo = (ma * mb).sqrt();
            let inside =
                geo >= 0.5 * alpha && geo <= 2.0 * alpha && ma + mb <= k.powf(c) * alpha;
            assert_eq!(mask.cells[i], inside, "cell {i}");
            expect += inside as usize;
        }
        assert_eq!(mask.count, expect);
        assert!(mask.count > 0, "degenerate scene");
    }

    #[test]
    fn dilation_grows_a_point_into_a_disk() {
        let n = 32;
        let mut cells = vec![false; n * n];
        cells[16 * n + 16] = true;
        let mask = CellMask::from_cells(n, cells);
        let grown = dilate_disk(&mask, 3.0);
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as i64 - 16).pow(2) + (y as i64 - 16).pow(2);
                assert_eq!(grown.cells[y * n + x], d2 <= 9, "({x},{y})");
            }
        }
        let same = dilate_disk(&mask, 0.0);
        assert_eq!(same.count, 1);
    }

    fn audit_scene(side: f64) -> (ConvEngine, FrequencySet) {
        let frame = Frame::new(side, 0.5).unwrap();
        let pts = vec![-0.55, 0.45];
        let coeffs = vec![Complex64::new(1.0, 0.0); 2];
        let freq = FrequencySet::new(pts, coeffs, 2, 1.0).unwrap();
        (ConvEngine::new(frame), freq)
    }

    #[test]
    fn empty_region_audits_to_zero() {
        let (engine, freq) = audit_scene(32.0);
        let mask = CellMask::empty(engine.frame.n);
        let report = audit_bilinear(
            &engine,
            &freq,
            (-0.6, -0.5),
            (0.4, 0.5),
            16.0,
            0.5,
            &mask,
        )
        .unwrap();
        assert_eq!(report.measured, 0.0);
        assert_eq!(report.fitted_constant, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn single_block_pair_ratio_is_recorded() {
        let (engine, freq) = audit_scene(64.0);
        let mask = CellMask::full(engine.frame.n);
        let report = audit_bilinear(
            &engine,
            &freq,
            (-0.6, -0.5),
            (0.4, 0.5),
            16.0,
            0.5,
            &mask,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.parameters["blocks_tau"], 1.0);
        assert_eq!(report.parameters["blocks_tau_prime"], 1.0);
        // unit characters: measured side is the box area; the smoothed
        // square sum is ~2 inside, so the bound side is ~4 D^-2 areas
        let d2 = 0.25;
        assert!(
            report.fitted_constant > 0.05 * d2 && report.fitted_constant < 1.5 * d2,
            "ratio {}",
            report.fitted_constant
        );
    }

    #[test]
    fn insufficient_interval_separation_is_rejected() {
        let (engine, freq) = audit_scene(32.0);
        let mask = CellMask::full(engine.frame.n);
        let err = audit_bilinear(&engine, &freq, (-0.6, -0.5), (-0.3, -0.2), 16.0, 0.5, &mask);
        assert!(err.is_err());
    }

    fn spread_freq(seed: u64) -> FrequencySet {
        let pts = vec![-0.9, -0.62, -0.3, 0.05, 0.33, 0.68, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<Complex64> =
            pts.iter().map(|_| Complex64::from_polar(1.0, rng.gen::<f64>() * TAU)).collect();
        let n = pts.len();
        FrequencySet::new(pts, coeffs, n, 0.9).unwrap()
    }

    #[test]
    fn single_cap_field_is_purely_narrow() {
        let frame = Frame::new(32.0, 0.5).unwrap();
        let freq =
            FrequencySet::new(vec![0.21], vec![Complex64::new(1.0, 0.0)], 1, 1.0).unwrap();
        let dec = broad_narrow_decompose(&frame, &freq, 64.0, 4.0, 4.0).unwrap();
        assert!(dec.pieces.is_empty());
        assert_eq!(dec.check.narrow_attained, dec.check.cells_checked);
        assert_eq!(dec.check.broad_attained, 0);
        assert!(dec.check.worst_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn two_far_caps_form_one_coarse_piece() {
        let frame = Frame::new(32.0, 0.5).unwrap();
        let pts = vec![-0.85, 0.8];
        let coeffs = vec![Complex64::new(1.0, 0.0); 2];
        let freq = FrequencySet::new(pts, coeffs, 2, 1.0).unwrap();
        let dec = broad_narrow_decompose(&frame, &freq, 64.0, 4.0, 4.0).unwrap();
        assert_eq!(dec.pieces.len(), 1, "pieces {:?}", dec.pieces);
        let piece = &dec.pieces[0];
        assert_eq!(piece.delta, 1.0);
        assert!(piece.tau.0 <= -0.85 && -0.85 <= piece.tau.1);
        assert!(piece.tau_prime.0 <= 0.8 && 0.8 <= piece.tau_prime.1);
        // unit characters everywhere: the pair product has unit modulus
        assert!((piece.sup_geo_mean - 1.0).abs() < 1e-9);
        assert!(dec.check.worst_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn one_level_when_k_reaches_sqrt_r() {
        let frame = Frame::new(16.0, 0.5).unwrap();
        let dec = broad_narrow_decompose(&frame, &spread_freq(5), 16.0, 4.0, 4.0).unwrap();
        assert_eq!(dec.m, 1);
    }

    #[test]
    fn spread_field_satisfies_the_iterated_bound_everywhere() {
        let frame = Frame::new(32.0, 0.5).unwrap();
        let dec = broad_narrow_decompose(&frame, &spread_freq(9), 64.0, 3.0, 4.0).unwrap();
        assert!(dec.m >= 2);
        assert!(!dec.pieces.is_empty());
        assert!(
            dec.check.worst_ratio <= 1.0 + 1e-9,
            "worst {}",
            dec.check.worst_ratio
        );
        assert_eq!(
            dec.check.narrow_attained + dec.check.broad_attained,
            dec.check.cells_checked
        );
    }

    #[test]
    fn undersized_constants_are_rejected() {
        let frame = Frame::new(16.0, 0.5).unwrap();
        assert!(broad_narrow_decompose(&frame, &spread_freq(1), 16.0, 1.5, 4.0).is_err());
        assert!(broad_narrow_decompose(&frame, &spread_freq(1), 16.0, 4.0, 2.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn overlap_test_is_symmetric(i1 in 0u32..8, i2 in 0u32..8, j1 in 0u32..8, j2 in 0u32..8) {
            let g = BlockGrid::for_scale(16.0).unwrap();
            let pad = ratio(1, 4);
            let a = diff_box(&g, i1, i2);
            let b = diff_box(&g, j1, j2);
            prop_assert_eq!(boxes_meet(&a, &b, pad), boxes_meet(&b, &a, pad));
        }

        #[test]
        fn broad_mask_is_contained_in_the_level_band(seed in 0u64..32) {
            let (frame, f_a, f_b) = two_cap_fields(16.0, seed);
            let alpha = 0.6;
            let mask = broad_set(&f_a, &f_b, (-0.5, -0.375), (0.3, 0.425), alpha, 4.0, 4.0).unwrap();
            for i in 0..frame.n * frame.n {
                if mask.cells[i] {
                    let geo = (f_a.vals[i].norm() * f_b.vals[i].norm()).sqrt();
                    prop_assert!(geo > alpha / 2.0 - 1e-12);
                }
            }
        }
    }
}
