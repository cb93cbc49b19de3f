//! Tube partitions of unity over a cap's dual lattice.
//!
//! For a cap at scale `s` centered at `xi` the plane is tiled by translates
//! of the cap's dual box: step `2 s^1/2` along the parabola tangent at `xi`
//! and step `2 s` along the normal. Each lattice site carries a separable
//! profile `psi_T(x) = u(s1-m1) u(s2-m2)` in rotated lattice coordinates;
//! the translates of `u` sum to one, so the `psi_T` tile the plane exactly.
//! Tubes whose weighted field sup exceeds a threshold are flagged bad, and
//! the complementary good mask is what the pruning recursion multiplies in.

use super::cutoff::TubeProfile;
use super::{FieldGrid, Frame, RealGrid};
use rayon::prelude::*;

/// Rotated lattice of one cap's dual boxes.
#[derive(Debug, Clone, Copy)]
pub struct TubeLattice {
    pub scale: f64,
    pub center_xi: f64,
    /// Unit tangent of the parabola at `center_xi`; the lattice's short axis.
    pub tangent: (f64, f64),
    pub step_t: f64,
    pub step_n: f64,
}

impl TubeLattice {
    pub fn for_cap(scale: f64, center_xi: f64) -> Self {
        let len = (1.0 + 4.0 * center_xi * center_xi).sqrt();
        TubeLattice {
            scale,
            center_xi,
            tangent: (1.0 / len, 2.0 * center_xi / len),
            step_t: 2.0 * scale.sqrt(),
            step_n: 2.0 * scale,
        }
    }

    /// Continuous lattice coordinates of a point: tangent and normal
    /// components in units of the respective steps.
    #[inline]
    pub fn lattice_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let (tx, ty) = self.tangent;
        ((x * tx + y * ty) / self.step_t, (-x * ty + y * tx) / self.step_n)
    }

    /// Center of the tube at lattice site `(m1, m2)`.
    pub fn site_center(&self, m1: i64, m2: i64) -> (f64, f64) {
        let (tx, ty) = self.tangent;
        let (a, b) = (m1 as f64 * self.step_t, m2 as f64 * self.step_n);
        (a * tx - b * ty, a * ty + b * tx)
    }

    #[inline]
    pub fn psi(&self, x: f64, y: f64, m1: i64, m2: i64) -> f64 {
        let prof = TubeProfile::shared();
        let (s1, s2) = self.lattice_coords(x, y);
        prof.value(s1 - m1 as f64) * prof.value(s2 - m2 as f64)
    }

    /// Sum of `psi` over the whole lattice; 1 up to profile tails.
    pub fn psi_sum(&self, x: f64, y: f64) -> f64 {
        let prof = TubeProfile::shared();
        let (s1, s2) = self.lattice_coords(x, y);
        prof.translate_sum(s1) * prof.translate_sum(s2)
    }
}

/// Per-tube field sups over one cap's lattice, with the bad/good split.
#[derive(Debug, Clone)]
pub struct TubeSet {
    pub lattice: TubeLattice,
    pub m1_lo: i64,
    pub m1_hi: i64,
    pub m2_lo: i64,
    pub m2_hi: i64,
    /// `sup_x psi_T(x) |f(x)|` over the grid, row-major with `m2` slow.
    pub sups: Vec<f32>,
    /// Bad-tube threshold in field units: a tube is bad when its weighted
    /// sup exceeds `threshold * psi_peak`, i.e. when the field on the tube
    /// core reaches the threshold after undoing the profile's peak dilution.
    pub threshold: f64,
    /// Peak value of `psi_T`, the rescale factor for the bad test.
    pub psi_peak: f64,
    pub n_bad: usize,
}

impl TubeSet {
    #[inline]
    fn width(&self) -> usize {
        (self.m1_hi - self.m1_lo + 1) as usize
    }

    #[inline]
    fn index(&self, m1: i64, m2: i64) -> usize {
        (m2 - self.m2_lo) as usize * self.width() + (m1 - self.m1_lo) as usize
    }

    pub fn n_tubes(&self) -> usize {
        self.sups.len()
    }

    pub fn sup_at(&self, m1: i64, m2: i64) -> f64 {
        self.sups[self.index(m1, m2)] as f64
    }

    pub fn is_bad(&self, m1: i64, m2: i64) -> bool {
        self.sup_at(m1, m2) > self.threshold * self.psi_peak
    }

    /// Lattice sites of the bad tubes, in fixed row-major order.
    pub fn bad_tubes(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::with_capacity(self.n_bad);
        for m2 in self.m2_lo..=self.m2_hi {
            for m1 in self.m1_lo..=self.m1_hi {
                if self.is_bad(m1, m2) {
                    out.push((m1, m2));
                }
            }
        }
        out
    }

    pub fn good_tubes(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::with_capacity(self.n_tubes() - self.n_bad);
        for m2 in self.m2_lo..=self.m2_hi {
            for m1 in self.m1_lo..=self.m1_hi {
                if !self.is_bad(m1, m2) {
                    out.push((m1, m2));
                }
            }
        }
        out
    }
}

/// Scans the grid once and records, for every tube of the lattice that can
/// reach the frame, the sup of `psi_T |f|` over cell centers. Candidates per
/// cell are limited to lattice sites within [`TubeProfile::SUP_WINDOW`]
/// steps; farther sites see the cell through a profile value below ~2e-4,
/// which cannot move a sup that classification cares about.
pub fn build_tubes(frame: &Frame, field: &FieldGrid, lattice: TubeLattice, threshold: f64) -> TubeSet {
    let prof = TubeProfile::shared();
    let w = TubeProfile::SUP_WINDOW;
    // lattice range reached from the box corners, sup window included
    let half = 0.5 * frame.side;
    let mut s1_min = f64::INFINITY;
    let mut s1_max = f64::NEG_INFINITY;
    let mut s2_min = f64::INFINITY;
    let mut s2_max = f64::NEG_INFINITY;
    for &(cx, cy) in &[(-half, -half), (-half, half), (half, -half), (half, half)] {
        let (s1, s2) = lattice.lattice_coords(cx, cy);
        s1_min = s1_min.min(s1);
        s1_max = s1_max.max(s1);
        s2_min = s2_min.min(s2);
        s2_max = s2_max.max(s2);
    }
    let m1_lo = s1_min.round() as i64 - w;
    let m1_hi = s1_max.round() as i64 + w;
    let m2_lo = s2_min.round() as i64 - w;
    let m2_hi = s2_max.round() as i64 + w;
    let width = (m1_hi - m1_lo + 1) as usize;
    let height = (m2_hi - m2_lo + 1) as usize;
    let n_tubes = width * height;

    let n = frame.n;
    let cand = (2 * w + 1) as usize;
    let sups = field
        .vals
        .par_chunks(n)
        .enumerate()
        .fold(
            || vec![0f32; n_tubes],
            |mut acc, (iy, row)| {
                let y = frame.coord(iy);
                let mut u1 = [0f64; 16];
                let mut u2 = [0f64; 16];
                for (ix, z) in row.iter().enumerate() {
                    let a = z.norm();
                    if a == 0.0 {
                        continue;
                    }
                    let (s1, s2) = lattice.lattice_coords(frame.coord(ix), y);
                    let b1 = s1.round() as i64;
                    let b2 = s2.round() as i64;
                    for d in 0..cand {
                        let m1 = b1 - w + d as i64;
                        u1[d] = prof.value(s1 - m1 as f64);
                        let m2 = b2 - w + d as i64;
                        u2[d] = prof.value(s2 - m2 as f64);
                    }
                    for d2 in 0..cand {
                        let m2 = b2 - w + d2 as i64;
                        let base = (m2 - m2_lo) as usize * width + (b1 - w - m1_lo) as usize;
                        let ua = u2[d2] * a;
                        for d1 in 0..cand {
                            let v = (u1[d1] * ua) as f32;
                            let slot = &mut acc[base + d1];
                            if v > *slot {
                                *slot = v;
                            }
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0f32; n_tubes],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        );

    let psi_peak = prof.plane_peak();
    let n_bad = sups.iter().filter(|&&s| s as f64 > threshold * psi_peak).count();
    TubeSet { lattice, m1_lo, m1_hi, m2_lo, m2_hi, sups, threshold, psi_peak, n_bad }
}

/// Adds `psi_T` for one lattice site onto a grid, touching only cells within
/// the profile's mask radius.
fn paint_site(frame: &Frame, lattice: &TubeLattice, m1: i64, m2: i64, out: &mut RealGrid) {
    let prof = TubeProfile::shared();
    let (tx, ty) = lattice.tangent;
    let (cx, cy) = lattice.site_center(m1, m2);
    let rt = TubeProfile::MASK_RADIUS * lattice.step_t;
    let rn = TubeProfile::MASK_RADIUS * lattice.step_n;
    let hx = rt * tx.abs() + rn * ty.abs();
    let hy = rt * ty.abs() + rn * tx.abs();
    let half = 0.5 * frame.side;
    let to_index = |c: f64| -> f64 { (c + half) / frame.h - 0.5 };
    let ix_lo = (to_index(cx - hx).ceil().max(0.0)) as usize;
    let ix_hi = (to_index(cx + hx).floor().min(frame.n as f64 - 1.0)) as usize;
    let iy_lo = (to_index(cy - hy).ceil().max(0.0)) as usize;
    let iy_hi = (to_index(cy + hy).floor().min(frame.n as f64 - 1.0)) as usize;
    if ix_lo > ix_hi || iy_lo > iy_hi {
        return;
    }
    let n = out.n;
    out.vals[iy_lo * n..(iy_hi + 1) * n]
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(dy, row)| {
            let y = frame.coord(iy_lo + dy);
            for ix in ix_lo..=ix_hi {
                let (s1, s2) = lattice.lattice_coords(frame.coord(ix), y);
                let v = prof.value(s1 - m1 as f64) * prof.value(s2 - m2 as f64);
                row[ix] += v as f32;
            }
        });
}

/// The good-tube partition mass `sum_{good T} psi_T`, clamped to `[0, 1]`.
/// Accumulated from whichever side of the split has fewer tubes, painting
/// sites in a fixed order.
pub fn good_mask(frame: &Frame, set: &TubeSet) -> RealGrid {
    let mut acc = RealGrid::zeros(frame);
    if 2 * set.n_bad <= set.n_tubes() {
        for (m1, m2) in set.bad_tubes() {
            paint_site(frame, &set.lattice, m1, m2, &mut acc);
        }
        acc.vals.par_iter_mut().for_each(|v| *v = (1.0 - *v).clamp(0.0, 1.0));
    } else {
        for (m1, m2) in set.good_tubes() {
            paint_site(frame, &set.lattice, m1, m2, &mut acc);
        }
        acc.vals.par_iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    acc
}
