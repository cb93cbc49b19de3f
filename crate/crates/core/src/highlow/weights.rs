//! Decaying window kernels matched to cap dual boxes.
//!
//! A cap at scale `s` occupies roughly `s^-1/2 x s^-1` of frequency space
//! next to the parabola, so averages of its field live on dual boxes of size
//! `s^1/2` along the tangent direction and `s` along the normal. The kernel
//! is a product of tenth-power rational decays on those two scales, rotated
//! into the cap's frame and normalized to unit mass on the sampling grid.

use super::ConvEngine;
use crate::freq::{ActiveSet, CapPartition};
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;

/// Decay exponent of each rational factor. Ten keeps every moment the
/// audits integrate finite with room to spare, and pushes the wraparound
/// tail of the padded convolution far below the audit tolerances.
pub const DECAY_POWER: i32 = 10;

/// Anisotropic window kernel `norm / ((1+(u/st)^2)^10 (1+(v/sn)^2)^10)`,
/// with `u` the coordinate along `tangent` and `v` the coordinate across it.
#[derive(Debug, Clone)]
pub struct WeightKernel {
    pub scale_t: f64,
    pub scale_n: f64,
    /// Unit vector of the fast-decay (tangent) axis.
    pub tangent: (f64, f64),
    /// Mass normalization; 1 until `spectrum_into` pins it to the grid.
    pub norm: f64,
}

impl WeightKernel {
    /// Kernel for a cap of the given scale centered at `xi` on the parabola:
    /// decay `scale^1/2` along the curve's tangent `(1, 2 xi)`, `scale`
    /// along the normal.
    pub fn for_cap(scale: f64, center_xi: f64) -> Self {
        let len = (1.0 + 4.0 * center_xi * center_xi).sqrt();
        WeightKernel {
            scale_t: scale.sqrt(),
            scale_n: scale,
            tangent: (1.0 / len, 2.0 * center_xi / len),
            norm: 1.0,
        }
    }

    /// Isotropic variant concentrated on a ball of the given radius.
    pub fn ball(radius: f64) -> Self {
        WeightKernel { scale_t: radius, scale_n: radius, tangent: (1.0, 0.0), norm: 1.0 }
    }

    #[inline]
    pub fn unnormalized_at(&self, x: f64, y: f64) -> f64 {
        let (tx, ty) = self.tangent;
        let u = (x * tx + y * ty) / self.scale_t;
        let v = (-x * ty + y * tx) / self.scale_n;
        ((1.0 + u * u) * (1.0 + v * v)).powi(-DECAY_POWER)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.norm * self.unnormalized_at(x, y)
    }

    /// Tabulates the kernel wrap-centered on the frame's padded box, fixes
    /// `norm` so the grid mass `sum w h^2` is exactly 1, and forward
    /// transforms in place. The result is ready for
    /// [`ConvEngine::accumulate_product`].
    pub fn spectrum_into(
        &mut self,
        engine: &ConvEngine,
        buf: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
    ) {
        let frame = &engine.frame;
        let p = frame.pad;
        buf.clear();
        buf.resize(p * p, Complex64::new(0.0, 0.0));
        let partials: Vec<f64> = buf
            .par_chunks_mut(p)
            .enumerate()
            .map(|(jy, row)| {
                let y = frame.wrap_coord(jy);
                let mut s = 0.0;
                for (jx, slot) in row.iter_mut().enumerate() {
                    let w = self.unnormalized_at(frame.wrap_coord(jx), y);
                    *slot = Complex64::new(w, 0.0);
                    s += w;
                }
                s
            })
            .collect();
        let mass = crate::grid::pairwise_sum(&partials) * frame.cell_area();
        self.norm = 1.0 / mass;
        let norm = self.norm;
        buf.par_iter_mut().for_each(|z| *z *= norm);
        engine.fft.forward(buf, scratch);
    }
}

/// Kernels for every active cap of one tau level, keyed by the cap's index
/// within that level.
#[derive(Debug, Clone)]
pub struct LevelWeights {
    pub level: usize,
    pub scale: f64,
    pub entries: Vec<(usize, WeightKernel)>,
}

pub fn build_weights(
    partition: &CapPartition,
    active: &ActiveSet,
    level: usize,
) -> Result<LevelWeights> {
    if level >= partition.n_tau_levels() {
        return Err(Error::InvalidParameter(format!(
            "tau level {level} out of range (have {})",
            partition.n_tau_levels()
        )));
    }
    let tl = &partition.tau_levels[level];
    let entries = tl
        .caps
        .iter()
        .enumerate()
        .filter(|(_, cap)| active.any_in(cap))
        .map(|(i, cap)| {
            let (lo, hi) = partition.cap_interval(cap);
            (i, WeightKernel::for_cap(tl.scale, 0.5 * (lo + hi)))
        })
        .collect();
    Ok(LevelWeights { level, scale: tl.scale, entries })
}
