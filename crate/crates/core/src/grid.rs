//! Grid primitives shared by the samplers and the convolution pipeline:
//! axis-aligned square regions, reductions that are deterministic for any
//! worker count, and an in-memory 2D FFT parallelized over rows.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Axis-aligned rectangle `[x0, x0+wx) x [t0, t0+wy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub t0: f64,
    pub wx: f64,
    pub wy: f64,
}

impl Rect {
    pub fn new(x0: f64, t0: f64, wx: f64, wy: f64) -> Self {
        Rect { x0, t0, wx, wy }
    }

    /// Square `[0, side)^2` anchored at the origin.
    pub fn square_at_origin(side: f64) -> Self {
        Rect { x0: 0.0, t0: 0.0, wx: side, wy: side }
    }

    /// Square of the given side centered at the origin.
    pub fn centered_square(side: f64) -> Self {
        Rect { x0: -side / 2.0, t0: -side / 2.0, wx: side, wy: side }
    }

    /// One full period of the standard lattice sum: `[0, n) x [0, n^2)`.
    pub fn period_box(n: usize) -> Self {
        let n = n as f64;
        Rect { x0: 0.0, t0: 0.0, wx: n, wy: n * n }
    }

    pub fn area(&self) -> f64 {
        self.wx * self.wy
    }
}

/// Sequential pairwise summation. The reduction tree depends only on the
/// slice length, so results are reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Fixed chunk width for parallel reductions. Chunk boundaries never depend
/// on the worker count, which keeps the combining tree (and therefore the
/// floating-point result) identical for 1 thread and for many.
pub const SUM_CHUNK: usize = 8192;

/// Parallel sum of `f(chunk_range)` over fixed-size chunks of `0..len`.
pub fn chunked_sum(len: usize, f: impl Fn(std::ops::Range<usize>) -> f64 + Sync) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let n_chunks = len.div_ceil(SUM_CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * SUM_CHUNK;
            let hi = (lo + SUM_CHUNK).min(len);
            f(lo..hi)
        })
        .collect();
    pairwise_sum(&partials)
}

pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Planned FFTs for a square `n x n` complex buffer, applied row-wise with a
/// blocked transpose in between. `scratch` must have the same length as the
/// buffer and is clobbered.
pub struct Fft2<T: FftNum> {
    pub n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: FftNum> Fft2<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Fft2 { n, fwd, inv }
    }

    fn rows(&self, buf: &mut [Complex<T>], fft: &Arc<dyn Fft<T>>) {
        let n = self.n;
        let scratch_len = fft.get_inplace_scratch_len();
        buf.par_chunks_exact_mut(n).for_each_init(
            || vec![Complex::new(T::zero(), T::zero()); scratch_len],
            |scratch, row| fft.process_with_scratch(row, scratch),
        );
    }

    fn pass(&self, buf: &mut Vec<Complex<T>>, scratch: &mut Vec<Complex<T>>, forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        self.rows(buf, fft);
        transpose_square(buf, scratch, self.n);
        std::mem::swap(buf, scratch);
        self.rows(buf, fft);
        transpose_square(buf, scratch, self.n);
        std::mem::swap(buf, scratch);
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, buf: &mut Vec<Complex<T>>, scratch: &mut Vec<Complex<T>>) {
        self.pass(buf, scratch, true);
    }

    /// Unnormalized inverse transform; divide by `n*n` to invert `forward`.
    pub fn inverse(&self, buf: &mut Vec<Complex<T>>, scratch: &mut Vec<Complex<T>>) {
        self.pass(buf, scratch, false);
    }
}

/// Blocked out-of-place transpose of a square row-major matrix.
pub fn transpose_square<T: Copy + Send + Sync>(src: &[T], dst: &mut [T], n: usize) {
    assert_eq!(src.len(), n * n);
    assert_eq!(dst.len(), n * n);
    const B: usize = 64;
    dst.par_chunks_mut(n * B).enumerate().for_each(|(jb, chunk)| {
        let j0 = jb * B;
        let jn = (n - j0).min(B);
        for i0 in (0..n).step_by(B) {
            let i1 = (i0 + B).min(n);
            for dj in 0..jn {
                let j = j0 + dj;
                let row = &mut chunk[dj * n..(dj + 1) * n];
                for i in i0..i1 {
                    row[i] = src[i * n + j];
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_smooth_data() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.37).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn chunked_sum_is_thread_count_invariant() {
        let xs: Vec<f64> = (0..100_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let eval = |r: std::ops::Range<usize>| pairwise_sum(&xs[r]);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| chunked_sum(xs.len(), eval));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| chunked_sum(xs.len(), eval));
        assert_eq!(one.to_bits(), many.to_bits());
    }

    #[test]
    fn transpose_round_trip() {
        let n = 130;
        let src: Vec<u64> = (0..n * n).map(|i| i as u64).collect();
        let mut once = vec![0u64; n * n];
        transpose_square(&src, &mut once, n);
        let mut twice = vec![0u64; n * n];
        transpose_square(&once, &mut twice, n);
        assert_eq!(src, twice);
        assert_eq!(once[3 * n + 7], src[7 * n + 3]);
    }

    #[test]
    fn fft2_inverts() {
        let n = 64;
        let mut buf: Vec<Complex<f64>> = (0..n * n)
            .map(|i| Complex::new((i as f64 * 0.1).cos(), (i as f64 * 0.05).sin()))
            .collect();
        let orig = buf.clone();
        let mut scratch = vec![Complex::new(0.0, 0.0); n * n];
        let fft = Fft2::new(n);
        fft.forward(&mut buf, &mut scratch);
        fft.inverse(&mut buf, &mut scratch);
        let scale = (n * n) as f64;
        let max_err = buf
            .iter()
            .zip(&orig)
            .map(|(a, b)| (a / scale - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12, "round-trip error {max_err}");
    }
}
