//! Smooth cutoff profiles: the radial plateau bump behind every spectral
//! split, the dyadic ring bank built from it, and the tabulated tube profile
//! whose integer translates sum to one.

use std::sync::OnceLock;

/// `C-infinity` radial plateau: identically 1 on `[0, 1]`, glued decay on
/// `(1, 2)`, identically 0 from 2 on.
pub fn plateau(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let v = r - 1.0;
        (1.0 - 1.0 / (1.0 - v * v)).exp()
    }
}

/// Dyadic ring decomposition of the frequency plane adapted to a box of side
/// `r` and cap exponent `beta`: a coarse piece flat below roughly the inverse
/// cap count `1/ceil(r^beta)`, rings doubling upward, and level cutoffs for
/// the intermediate scales. The pieces telescope to exactly 1 for all radii
/// up to 4, which covers every frequency the sampled grids can hold.
#[derive(Debug, Clone)]
pub struct CutoffBank {
    pub r: f64,
    pub beta: f64,
    /// Cap count `ceil(r^beta)`.
    pub m_cap: u64,
    /// `j_top` with `2^j_top <= m_cap < 2^(j_top+1)`.
    pub j_top: i32,
}

impl CutoffBank {
    pub fn new(r: f64, beta: f64) -> Self {
        let m_cap = r.powf(beta).ceil() as u64;
        let j_top = 63 - m_cap.leading_zeros() as i32;
        CutoffBank { r, beta, m_cap, j_top }
    }

    /// Low-pass piece: flat for `|xi| <= 2^-(j_top+2)`, gone past `2^-j_top`.
    pub fn coarse(&self, t: f64) -> f64 {
        plateau(2f64.powi(self.j_top + 1) * t)
    }

    /// Ring at dyadic scale `s = 2^-j`: supported on `s/2 <= |xi| <= 2s`.
    pub fn ring(&self, j: i32, t: f64) -> f64 {
        plateau(2f64.powi(j) * t) - plateau(2f64.powi(j + 1) * t)
    }

    /// All ring indices in the bank, coarsest ring last.
    pub fn ring_indices(&self) -> std::ops::RangeInclusive<i32> {
        -2..=self.j_top
    }

    /// Ring indices audited against the distribution profile: dyadic
    /// `s = 2^-j` between `r^-beta` and `r^-1/2`.
    pub fn audit_ring_indices(&self) -> Vec<i32> {
        let j_min = (0.5 * self.r.log2()).ceil() as i32;
        let j_max = (self.beta * self.r.log2()).floor() as i32;
        (j_min..=j_max.min(self.j_top)).collect()
    }

    /// Low cutoff for an intermediate scale: flat below `scale^-1/2`,
    /// `scale` being the next finer level's scale parameter.
    pub fn level_cutoff(&self, next_scale: f64, t: f64) -> f64 {
        plateau(next_scale.sqrt() * t)
    }

    /// The telescoped sum of every piece; 1 on the whole sampled frequency
    /// range by construction.
    pub fn partition_value(&self, t: f64) -> f64 {
        let mut acc = self.coarse(t);
        for j in self.ring_indices() {
            acc += self.ring(j, t);
        }
        acc
    }
}

const TUBE_SUPPORT: f64 = 0.375;
const TUBE_EXPONENT: i32 = 4;
const TABLE_STEP: f64 = 1.0 / 64.0;
const TABLE_MAX: f64 = 16.0;

/// Tube cross-section profile `u`: the unit-window moving average of the
/// squared Fourier transform of a compactly supported even bump. Integer
/// translates of `u` sum to exactly 1 (the bump's autocorrelation vanishes
/// at every nonzero integer frequency), so products `u(s1-m1) u(s2-m2)`
/// tile the plane over the tube lattice.
#[derive(Debug)]
pub struct TubeProfile {
    /// Cumulative mass of `|b-hat|^2` from 0, tabulated on a uniform grid.
    cum: Vec<f64>,
    total: f64,
}

static PROFILE: OnceLock<TubeProfile> = OnceLock::new();

impl TubeProfile {
    pub fn shared() -> &'static TubeProfile {
        PROFILE.get_or_init(TubeProfile::build)
    }

    fn build() -> TubeProfile {
        // b(u) = (1 - (u/B)^2)^4 on [-B, B]: edge-flat enough that |b-hat|^2
        // drops through 1e-12 within a few lattice steps past the main lobe.
        let nq = 4096usize;
        let du = TUBE_SUPPORT / nq as f64;
        let b = |u: f64| {
            let v = u / TUBE_SUPPORT;
            (1.0 - v * v).max(0.0).powi(TUBE_EXPONENT)
        };
        let b_hat = |t: f64| {
            // Even integrand: 2 * integral over [0, B] of b(u) cos(2 pi t u).
            let mut acc = 0.0;
            for i in 0..nq {
                let u = (i as f64 + 0.5) * du;
                acc += b(u) * (std::f64::consts::TAU * t * u).cos();
            }
            2.0 * acc * du
        };
        let steps = (TABLE_MAX / TABLE_STEP).round() as usize;
        let rho: Vec<f64> = (0..=steps)
            .map(|i| {
                let v = b_hat(i as f64 * TABLE_STEP);
                v * v
            })
            .collect();
        let mut cum = Vec::with_capacity(rho.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in rho.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * TABLE_STEP;
            cum.push(acc);
        }
        let total = 2.0 * acc;
        TubeProfile { cum, total }
    }

    /// Signed cumulative mass `integral of |b-hat|^2 from -inf to t`,
    /// Catmull-Rom interpolated between table nodes.
    fn mass_below(&self, t: f64) -> f64 {
        let half = 0.5 * self.total;
        let a = t.abs();
        if a >= TABLE_MAX {
            return if t >= 0.0 { self.total } else { 0.0 };
        }
        let pos = a / TABLE_STEP;
        let i = (pos.floor() as usize).min(self.cum.len() - 2);
        let u = pos - i as f64;
        let grab = |k: isize| {
            let k = k.clamp(0, self.cum.len() as isize - 1) as usize;
            self.cum[k]
        };
        let (p0, p1, p2, p3) = (grab(i as isize - 1), grab(i as isize), grab(i as isize + 1), grab(i as isize + 2));
        let c = 0.5
            * (2.0 * p1
                + (p2 - p0) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u);
        if t >= 0.0 {
            half + c
        } else {
            half - c
        }
    }

    /// Profile value: mass of `|b-hat|^2` in the unit window centered at `t`,
    /// normalized so that integer translates sum to 1.
    pub fn value(&self, t: f64) -> f64 {
        ((self.mass_below(t + 0.5) - self.mass_below(t - 0.5)) / self.total).max(0.0)
    }

    /// Sum of all integer translates at `t`; equals 1 up to table tails.
    pub fn translate_sum(&self, t: f64) -> f64 {
        let lo = (t - TABLE_MAX - 1.0).floor() as i64;
        let hi = (t + TABLE_MAX + 1.0).ceil() as i64;
        (lo..=hi).map(|m| self.value(t - m as f64)).sum()
    }

    /// Fraction of the profile's unit mass lying outside `[-w, w]`.
    pub fn mass_outside(&self, w: f64) -> f64 {
        // integral of u over |t| > w, resolved on a fine subgrid.
        let step = TABLE_STEP / 4.0;
        let stop = TABLE_MAX + 1.0;
        let mut acc = 0.0;
        let mut t = w + 0.5 * step;
        while t < stop {
            acc += self.value(t) * step;
            t += step;
        }
        2.0 * acc
    }

    /// Candidate window half-width for per-tube sup scans: translates
    /// farther than this contribute below ~2e-4 of a cell's value.
    pub const SUP_WINDOW: i64 = 3;

    /// Peak of the separable plane profile `u(s1) u(s2)`. Tube sups are
    /// weighted by the profile, so thresholds stated in field units are
    /// rescaled by this before comparison.
    pub fn plane_peak(&self) -> f64 {
        let v = self.value(0.0);
        v * v
    }

    /// Half-width, in lattice steps, beyond which the profile is treated as
    /// zero when accumulating masks.
    pub const MASK_RADIUS: f64 = 8.0;
}
