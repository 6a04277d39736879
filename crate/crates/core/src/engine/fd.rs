//! Frequency-domain subband backpropagation reference: exact per-subband
//! dispersion (walk-off and constant phase included) and XPM coupling through
//! the subband intensities, with no complexity constraints.

use crate::channel::{log_step_grid, propagate_span, Direction, FiberParams, SplitStepField};
use crate::fft::{angular_frequencies, FftPair};
use crate::filterbank::{FilterBankSpec, SubbandSet};
use crate::{Error, Result, C64};

struct SubbandField {
    bands: Vec<Vec<C64>>,
    fft: FftPair,
    /// `(W + w_i)^2` on the FFT grid of every subband.
    omega_sq: Vec<Vec<f64>>,
    beta2_s2_per_km: f64,
}

impl SplitStepField for SubbandField {
    fn disperse(&mut self, xi_km: f64, sign: f64) {
        if xi_km == 0.0 || self.beta2_s2_per_km == 0.0 {
            return;
        }
        let kappa = sign * self.beta2_s2_per_km * xi_km / 2.0;
        for (band, w2) in self.bands.iter_mut().zip(&self.omega_sq) {
            self.fft.forward(band);
            for (u, w) in band.iter_mut().zip(w2) {
                *u *= C64::cis(kappa * w);
            }
            self.fft.inverse(band);
        }
    }

    fn kerr(&mut self, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let len = self.bands[0].len();
        let total: Vec<f64> = (0..len).map(|k| self.bands.iter().map(|b| b[k].norm_sqr()).sum()).collect();
        for band in self.bands.iter_mut() {
            for (u, t) in band.iter_mut().zip(&total) {
                // SPM from the own subband, twice the intensity of all others
                *u *= C64::cis(coeff * (2.0 * t - u.norm_sqr()));
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for u in self.bands.iter_mut().flatten() {
            *u *= factor;
        }
    }
}

/// Backpropagate analysed subbands (physical field units) over the whole
/// link with `stps` logarithmic steps per span. Intended for banks without
/// downsampling.
pub fn fd_subband_dbp_baseline(
    subbands: &SubbandSet,
    fiber: &FiberParams,
    stps: usize,
    bank: &FilterBankSpec,
) -> Result<SubbandSet> {
    fiber.validate()?;
    if subbands.half_width() != bank.half_width() {
        return Err(Error::inconsistent("subband count differs from the filter bank"));
    }
    if subbands.len() < 2 {
        return Err(Error::invalid("need at least two samples per subband"));
    }
    let grid = log_step_grid(fiber.span_km, stps, fiber.alpha_db_per_km)?;
    let rate = subbands.rate();
    let base = angular_frequencies(subbands.len(), rate);
    let omega_sq = bank
        .indices()
        .map(|i| {
            let wi = bank.omega(i);
            base.iter().map(|w| (w + wi) * (w + wi)).collect()
        })
        .collect();
    let mut field = SubbandField {
        bands: subbands.bands().to_vec(),
        fft: FftPair::new(subbands.len()),
        omega_sq,
        beta2_s2_per_km: fiber.beta2_s2_per_km(),
    };
    let inv_amp = 10f64.powf(-fiber.span_gain_db() / 20.0);
    for _ in 0..fiber.n_spans {
        field.scale(inv_amp);
        propagate_span(&mut field, fiber, &grid, fiber.gamma_per_w_km, Direction::Backward);
    }
    Ok(SubbandSet::from_parts(field.bands, rate, subbands.t0_offset(), subbands.input_offset()))
}
