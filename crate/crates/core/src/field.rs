//! Evaluation of trigonometric sums with parabolic frequencies on uniform
//! grids, plus the grid statistics built on top: moments, sup norms, and
//! superlevel-set areas.

use crate::grid::{chunked_sum, Rect};
use crate::{Error, FrequencySet, Result, MEMORY_BUDGET_BYTES};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::TAU;

/// `e(p) = exp(2 pi i p)`, with the argument reduced to `[-1/2, 1/2]`
/// before the trig call so large phases keep full precision.
#[inline]
pub fn unit_phase(p: f64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * (p - p.round()))
}

// Coefficient of e(xi * x) on the row at height y, for a sample row that
// starts at x0: a * e(xi*x0 + xi^2*y). Shared by both row evaluators so
// the paths differ only in the in-row march.
#[inline]
fn row_carrier(a: Complex64, xi: f64, x0: f64, y: f64) -> Complex64 {
    a * unit_phase(xi * x0 + xi * xi * y)
}

/// Field samples on a uniform grid over a rectangle. Row-major storage,
/// index `iy * nx + ix`; sample `(ix, iy)` sits at
/// `(x0 + ix*hx, t0 + iy*hy)` (left-closed lattice).
#[derive(Debug, Clone)]
pub struct SampledField {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    values: Vec<Complex64>,
}

/// Maximum grid spacing for alias-free sampling: frequencies live in
/// `[-1,1]^2`, so step 1/4 is 2x oversampled.
pub const MAX_SPACING: f64 = 0.25;

/// Evaluates on the uniform grid of target spacing `h` (both axes).
/// Rejects `h > 1/4`: coarser grids alias the band.
pub fn evaluate_spaced(freq: &FrequencySet, rect: &Rect, h: f64) -> Result<SampledField> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing {h} must be positive")));
    }
    if h > MAX_SPACING + 1e-12 {
        return Err(Error::Aliasing { spacing: h, band: 1.0 });
    }
    let nx = (rect.wx / h).round().max(1.0) as usize;
    let ny = (rect.wy / h).round().max(1.0) as usize;
    evaluate(freq, rect, nx, ny)
}

/// Evaluates the sum on the grid. Rows go through a length-`nx` inverse
/// DFT when every `xi * wx` is an integer (phases then step through exact
/// roots of unity); otherwise each row runs a multiply-accumulate
/// recurrence over the frequencies.
pub fn evaluate(freq: &FrequencySet, rect: &Rect, nx: usize, ny: usize) -> Result<SampledField> {
    check_grid(rect, nx, ny)?;
    if fft_path_applies(freq, rect) {
        evaluate_fft(freq, rect, nx, ny)
    } else {
        evaluate_recurrence(freq, rect, nx, ny)
    }
}

/// Reference evaluator: every sample is an independent sum with phases
/// computed from scratch. Slow; exists to cross-check `evaluate`.
pub fn evaluate_reference(
    freq: &FrequencySet,
    rect: &Rect,
    nx: usize,
    ny: usize,
) -> Result<SampledField> {
    check_grid(rect, nx, ny)?;
    let hx = rect.wx / nx as f64;
    let hy = rect.wy / ny as f64;
    let points = freq.points();
    let coeffs = freq.coeffs();
    let mut values = vec![Complex64::default(); nx * ny];
    values.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
        let y = rect.t0 + iy as f64 * hy;
        for (ix, v) in row.iter_mut().enumerate() {
            let x = rect.x0 + ix as f64 * hx;
            let mut acc = Complex64::default();
            for (&xi, &a) in points.iter().zip(coeffs) {
                acc += a * unit_phase(xi * x + xi * xi * y);
            }
            *v = acc;
        }
    });
    Ok(SampledField { rect: *rect, nx, ny, values })
}

fn check_grid(rect: &Rect, nx: usize, ny: usize) -> Result<()> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidParameter("empty sample grid".into()));
    }
    if !(rect.wx > 0.0 && rect.wy > 0.0) {
        return Err(Error::EmptyRegion);
    }
    let need = (nx as u128) * (ny as u128) * 16;
    if need > MEMORY_BUDGET_BYTES as u128 {
        return Err(Error::MemoryBudget {
            need: need.min(u64::MAX as u128) as u64,
            budget: MEMORY_BUDGET_BYTES,
        });
    }
    Ok(())
}

pub(crate) fn fft_path_applies(freq: &FrequencySet, rect: &Rect) -> bool {
    freq.points().iter().all(|&xi| {
        let t = xi * rect.wx;
        (t - t.round()).abs() <= 1e-9
    })
}

fn evaluate_recurrence(
    freq: &FrequencySet,
    rect: &Rect,
    nx: usize,
    ny: usize,
) -> Result<SampledField> {
    let hx = rect.wx / nx as f64;
    let hy = rect.wy / ny as f64;
    let points = freq.points();
    let coeffs = freq.coeffs();
    let steps: Vec<Complex64> = points.iter().map(|&xi| unit_phase(xi * hx)).collect();
    let mut values = vec![Complex64::default(); nx * ny];
    values.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
        let y = rect.t0 + iy as f64 * hy;
        let mut z: Vec<Complex64> = points
            .iter()
            .zip(coeffs)
            .map(|(&xi, &a)| row_carrier(a, xi, rect.x0, y))
            .collect();
        for v in row.iter_mut() {
            let mut acc = Complex64::default();
            for zj in &z {
                acc += zj;
            }
            *v = acc;
            for (zj, wj) in z.iter_mut().zip(&steps) {
                *zj *= wj;
            }
        }
    });
    Ok(SampledField { rect: *rect, nx, ny, values })
}

fn evaluate_fft(freq: &FrequencySet, rect: &Rect, nx: usize, ny: usize) -> Result<SampledField> {
    let hy = rect.wy / ny as f64;
    let points = freq.points();
    let coeffs = freq.coeffs();
    // Integer bin of each frequency: xi*x = xi*x0 + (xi*wx) * ix/nx, and
    // e(B*ix/nx) depends only on B mod nx, so binning is exact.
    let bins: Vec<usize> = points
        .iter()
        .map(|&xi| (xi * rect.wx).round() as i64)
        .map(|b| b.rem_euclid(nx as i64) as usize)
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(nx);
    let scratch_len = fft.get_inplace_scratch_len();
    let mut values = vec![Complex64::default(); nx * ny];
    values.par_chunks_mut(nx).enumerate().for_each_init(
        || vec![Complex64::default(); scratch_len],
        |scratch, (iy, row)| {
            let y = rect.t0 + iy as f64 * hy;
            for v in row.iter_mut() {
                *v = Complex64::default();
            }
            for ((&xi, &a), &b) in points.iter().zip(coeffs).zip(&bins) {
                row[b] += row_carrier(a, xi, rect.x0, y);
            }
            // rustfft's unnormalized inverse: row[ix] = sum_b c_b e(b*ix/nx).
            fft.process_with_scratch(row, scratch);
        },
    );
    Ok(SampledField { rect: *rect, nx, ny, values })
}

impl SampledField {
    pub(crate) fn from_parts(rect: Rect, nx: usize, ny: usize, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), nx * ny);
        SampledField { rect, nx, ny, values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn hx(&self) -> f64 {
        self.rect.wx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.wy / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.rect.x0 + ix as f64 * self.hx()
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.rect.t0 + iy as f64 * self.hy()
    }

    pub fn at(&self, ix: usize, iy: usize) -> Complex64 {
        self.values[iy * self.nx + ix]
    }

    /// Mean of `|F|^p` over the grid. Fixed-chunk reduction, so the result
    /// does not depend on the thread count.
    pub fn mean_power(&self, p: f64) -> f64 {
        let vals = &self.values;
        let half = p / 2.0;
        let total = if half.fract() == 0.0 && (0.0..=64.0).contains(&half) {
            let q = half as i32;
            chunked_sum(vals.len(), |r| {
                let mut acc = 0.0;
                for v in &vals[r] {
                    acc += v.norm_sqr().powi(q);
                }
                acc
            })
        } else {
            chunked_sum(vals.len(), |r| {
                let mut acc = 0.0;
                for v in &vals[r] {
                    acc += v.norm_sqr().powf(half);
                }
                acc
            })
        };
        total / vals.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .par_iter()
            .map(|v| v.norm_sqr())
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    pub fn min_modulus(&self) -> f64 {
        self.values
            .par_iter()
            .map(|v| v.norm_sqr())
            .reduce(|| f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Samples with `|F| >= alpha` (threshold ties counted in).
    pub fn superlevel_count(&self, alpha: f64) -> usize {
        let a2 = alpha * alpha;
        self.values
            .par_iter()
            .filter(|v| v.norm_sqr() >= a2)
            .count()
    }

    /// Area proxy: superlevel sample count times the cell area.
    pub fn superlevel_area(&self, alpha: f64) -> f64 {
        self.superlevel_count(alpha) as f64 * self.cell_area()
    }

    /// Fraction of samples within relative distance `kappa` of the level,
    /// i.e. `(1-kappa)*alpha <= |F| <= (1+kappa)*alpha`. Discretization
    /// guard for level-set area estimates.
    pub fn near_level_fraction(&self, alpha: f64, kappa: f64) -> f64 {
        let lo = ((1.0 - kappa) * alpha).max(0.0).powi(2);
        let hi = ((1.0 + kappa) * alpha).powi(2);
        let n = self
            .values
            .par_iter()
            .filter(|v| {
                let m = v.norm_sqr();
                m >= lo && m <= hi
            })
            .count();
        n as f64 / self.values.len() as f64
    }

    /// Area of cells within relative distance `kappa` of the level: the
    /// uncertainty attached to `superlevel_area` at that level.
    pub fn boundary_budget(&self, alpha: f64, kappa: f64) -> f64 {
        self.near_level_fraction(alpha, kappa) * self.rect.area()
    }

    /// Mean of `|F|^p` restricted to the sub-rectangle (clipped to the
    /// sampled extent; errors if no sample falls inside).
    pub fn mean_power_in(&self, sub: &Rect, p: f64) -> Result<f64> {
        let (hx, hy) = (self.hx(), self.hy());
        let ix0 = (((sub.x0 - self.rect.x0) / hx).ceil().max(0.0)) as usize;
        let iy0 = (((sub.t0 - self.rect.t0) / hy).ceil().max(0.0)) as usize;
        let ix1 = ((((sub.x0 + sub.wx) - self.rect.x0) / hx).ceil() as usize).min(self.nx);
        let iy1 = ((((sub.t0 + sub.wy) - self.rect.t0) / hy).ceil() as usize).min(self.ny);
        if ix0 >= ix1 || iy0 >= iy1 {
            return Err(Error::EmptyRegion);
        }
        let (snx, sny) = (ix1 - ix0, iy1 - iy0);
        let half = p / 2.0;
        let total = chunked_sum(snx * sny, |r| {
            let mut acc = 0.0;
            for k in r {
                let (iy, ix) = (iy0 + k / snx, ix0 + k % snx);
                acc += self.values[iy * self.nx + ix].norm_sqr().powf(half);
            }
            acc
        });
        Ok(total / (snx * sny) as f64)
    }

    /// Smallest and largest `|F|` over the samples inside the
    /// sub-rectangle (clipped; errors if no sample falls inside).
    pub fn modulus_range_in(&self, sub: &Rect) -> Result<(f64, f64)> {
        let (hx, hy) = (self.hx(), self.hy());
        let ix0 = (((sub.x0 - self.rect.x0) / hx).ceil().max(0.0)) as usize;
        let iy0 = (((sub.t0 - self.rect.t0) / hy).ceil().max(0.0)) as usize;
        let ix1 = ((((sub.x0 + sub.wx) - self.rect.x0) / hx).ceil() as usize).min(self.nx);
        let iy1 = ((((sub.t0 + sub.wy) - self.rect.t0) / hy).ceil() as usize).min(self.ny);
        if ix0 >= ix1 || iy0 >= iy1 {
            return Err(Error::EmptyRegion);
        }
        let rows: Vec<(f64, f64)> = (iy0..iy1)
            .into_par_iter()
            .map(|iy| {
                let row = &self.values[iy * self.nx + ix0..iy * self.nx + ix1];
                row.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
                    let m = v.norm_sqr();
                    (lo.min(m), hi.max(m))
                })
            })
            .collect();
        let (lo, hi) = rows
            .into_iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), (l, h)| (lo.min(l), hi.max(h)));
        Ok((lo.sqrt(), hi.sqrt()))
    }

    /// Superlevel areas over a list of thresholds, with the `kappa = 0.05`
    /// boundary budget recorded per threshold.
    pub fn level_profile(&self, alphas: &[f64]) -> LevelSetProfile {
        const KAPPA: f64 = 0.05;
        let areas = alphas.iter().map(|&a| self.superlevel_area(a)).collect();
        let budgets = alphas
            .iter()
            .map(|&a| self.boundary_budget(a, KAPPA))
            .collect();
        LevelSetProfile {
            alphas: alphas.to_vec(),
            areas,
            budgets,
        }
    }
}

/// Measured superlevel-set areas across thresholds.
#[derive(Debug, Clone)]
pub struct LevelSetProfile {
    pub alphas: Vec<f64>,
    pub areas: Vec<f64>,
    /// Boundary-cell area near each threshold; the discretization
    /// uncertainty of the matching `areas` entry.
    pub budgets: Vec<f64>,
}

/// Closed-form superlevel area bound (growth factor only, no absolute
/// constant): `N^2 R m / alpha^4` for `alpha^2 > R`,
/// `N^2 R^2 m / alpha^6` for `N <= alpha^2 <= R`, and `R^2` below that,
/// with `m = sum |a|^2`.
pub fn superlevel_bound(n: usize, r: f64, alpha: f64, l2_mass: f64) -> Result<f64> {
    let nf = n as f64;
    if !(r >= nf - 1e-9 && r <= nf * nf + 1e-9) {
        return Err(Error::ScaleRange(format!("R = {r} outside [N, N^2] for N = {n}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    let a2 = alpha * alpha;
    Ok(if a2 > r {
        nf * nf * r * l2_mass / a2.powi(2)
    } else if a2 >= nf {
        nf * nf * r * r * l2_mass / a2.powi(3)
    } else {
        r * r
    })
}

/// Closed-form moment bound: `(N^{1-1/p-1/q} R^{1/p} + N^{1/2-1/q} R^{2/p})`
/// times the coefficient `l^q` norm. Requires `3/p + 1/q <= 1`; `q` may be
/// infinite.
pub fn lq_lp_bound(n: usize, r: f64, p: f64, q: f64, freq: &FrequencySet) -> Result<f64> {
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    if 3.0 / p + inv_q > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "(p, q) = ({p}, {q}) violates 3/p + 1/q <= 1"
        )));
    }
    let nf = n as f64;
    if !(r >= nf - 1e-9 && r <= nf * nf + 1e-9) {
        return Err(Error::ScaleRange(format!("R = {r} outside [N, N^2] for N = {n}")));
    }
    let lead = nf.powf(1.0 - 1.0 / p - inv_q) * r.powf(1.0 / p)
        + nf.powf(0.5 - inv_q) * r.powf(2.0 / p);
    Ok(lead * freq.lq_mass(q))
}
