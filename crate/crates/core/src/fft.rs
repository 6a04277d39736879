//! Thin wrapper around `rustfft` with the conventions used throughout the crate.
//!
//! Forward transform: `X[k] = sum_n x[n] e^{-j 2 pi k n / N}`; the inverse is
//! normalised by `1/N`, so a spectrum multiplied by `e^{j phi(omega)}` acts on
//! a waveform written as `x(t) = integral X(omega) e^{j omega t}`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

#[derive(Clone)]
pub struct FftPair {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// Normalised inverse transform.
    pub fn inverse(&self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Angular frequency (rad/s) of every FFT bin, in transform order.
pub fn angular_frequencies(len: usize, sample_rate: f64) -> Vec<f64> {
    let n = len as i64;
    (0..n)
        .map(|k| {
            let signed = if k < (n + 1) / 2 { k } else { k - n };
            2.0 * PI * signed as f64 * sample_rate / len as f64
        })
        .collect()
}

/// Band-limited resampling of a periodic sequence by spectral truncation or
/// zero-padding. The Nyquist bin of an even-length target is dropped.
pub fn resample_periodic(x: &[C64], new_len: usize) -> Vec<C64> {
    let n = x.len();
    if n == new_len {
        return x.to_vec();
    }
    let mut spec = x.to_vec();
    FftPair::new(n).forward(&mut spec);
    let keep = n.min(new_len);
    // bins with |k| < keep/2 survive; an odd `keep` keeps one extra positive bin
    let pos = keep.div_ceil(2);
    let neg = keep / 2;
    let mut out = vec![C64::new(0.0, 0.0); new_len];
    for k in 0..pos {
        out[k] = spec[k];
    }
    for k in 1..neg {
        out[new_len - k] = spec[n - k];
    }
    if keep % 2 == 0 && new_len < n {
        // drop the ambiguous Nyquist bin of the shorter grid
        out[pos] = C64::new(0.0, 0.0);
    } else if keep % 2 == 0 && neg > 0 {
        out[new_len - neg] = spec[n - neg];
    }
    FftPair::new(new_len).inverse(&mut out);
    let scale = new_len as f64 / n as f64;
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}
