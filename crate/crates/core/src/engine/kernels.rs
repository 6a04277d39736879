//! Datapath primitives shared by the engine and the training graph.
//!
//! All filters are causal with zero history; sequence lengths are preserved
//! (samples pushed past the end are dropped).

use crate::{Error, Result, C64};

use super::CdFilter;

/// Symmetric CD filter via folding: `y[n] = h0 x[n-L] + sum_d h_d (x[n-L-d] + x[n-L+d])`.
pub(crate) fn cd_folded(x: &[C64], half: &[C64]) -> Vec<C64> {
    let l = half.len() - 1;
    let n = x.len() as isize;
    let at = |k: isize| if k >= 0 && k < n { x[k as usize] } else { C64::new(0.0, 0.0) };
    (0..n)
        .map(|k| {
            let c = k - l as isize;
            let mut acc = half[0] * at(c);
            for (d, h) in half.iter().enumerate().skip(1) {
                acc += *h * (at(c - d as isize) + at(c + d as isize));
            }
            acc
        })
        .collect()
}

/// Chromatic-dispersion FIR filtering (delay `L` samples).
pub fn apply_cd(x: &[C64], filter: &CdFilter) -> Vec<C64> {
    cd_folded(x, filter.half())
}

pub(crate) fn delay<T: Copy + Default>(x: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::default(); x.len()];
    if d < x.len() {
        out[d..].copy_from_slice(&x[..x.len() - d]);
    }
    out
}

pub(crate) fn intensity(x: &[C64]) -> Vec<f64> {
    x.iter().map(|v| v.norm_sqr()).collect()
}

/// One polynomial-matrix factor: `out_i[k] = sum_j sum_d g[i][j][d] in_j[k-d]`,
/// coefficients laid out `(i, j, d)` row-major; masked-out entries are skipped.
pub(crate) fn mimo_factor_apply(input: &[Vec<f64>], coeffs: &[f64], mask: &[bool], order: usize) -> Vec<Vec<f64>> {
    let n = input.len();
    let len = input[0].len();
    let taps = order + 1;
    (0..n)
        .map(|i| {
            let mut out = vec![0.0; len];
            for (j, a) in input.iter().enumerate() {
                for d in 0..taps {
                    let idx = (i * n + j) * taps + d;
                    if !mask[idx] || coeffs[idx] == 0.0 {
                        continue;
                    }
                    let g = coeffs[idx];
                    for k in d..len {
                        out[k] += g * a[k - d];
                    }
                }
            }
            out
        })
        .collect()
}

/// `u[k] exp(j b[k])`.
pub fn nonlinear_phase_rotate(u: &[C64], b: &[f64]) -> Vec<C64> {
    u.iter().zip(b).map(|(x, p)| x * C64::cis(*p)).collect()
}

/// Causal FIR with real taps.
pub(crate) fn fir_real(x: &[C64], taps: &[f64]) -> Vec<C64> {
    (0..x.len())
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for (j, h) in taps.iter().enumerate().take(k + 1) {
                acc += x[k - j] * *h;
            }
            acc
        })
        .collect()
}

/// Lagrange interpolator delaying by `n_taps/2 - 1 + mu` samples.
pub fn fractional_delay_taps(mu: f64, n_taps: usize) -> Result<Vec<f64>> {
    if n_taps < 2 || n_taps % 2 != 0 {
        return Err(Error::invalid("Lagrange fractional delay needs an even tap count"));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::invalid(format!("fractional delay {mu} outside [0, 1)")));
    }
    let d = (n_taps / 2 - 1) as f64 + mu;
    Ok((0..n_taps)
        .map(|k| {
            (0..n_taps)
                .filter(|&m| m != k)
                .map(|m| (d - m as f64) / (k as f64 - m as f64))
                .product()
        })
        .collect())
}
