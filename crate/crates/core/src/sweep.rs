//! Deterministic parameter sweeps over (N, R, alpha) with regime fits.
