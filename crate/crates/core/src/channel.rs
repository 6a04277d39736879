//! Fiber channel simulation and the linear / full-DBP reference receivers.
//!
//! Field model (single polarization, field in sqrt(W), z in km):
//!
//! ```text
//! du/dz = -(alpha/2) u + j (beta2/2) d^2u/dt^2 + j gamma |u|^2 u
//! ```
//!
//! so forward dispersion multiplies the spectrum by `exp(-j beta2 z w^2 / 2)`
//! and compensation by `exp(+j beta2 z w^2 / 2)`. Propagation uses symmetric
//! (Strang) splitting per step: half dispersion, Kerr rotation with the step's
//! effective length evaluated at the entry power, attenuation, half
//! dispersion. Consecutive half-steps inside a span are fused into a single
//! FFT pair. Spectra are circular, i.e. signals are treated as periodic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fft::{angular_frequencies, FftPair};
use crate::signal::ComplexSignal;
use crate::{Error, Result, C64};

const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    pub alpha_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    pub span_km: f64,
    pub n_spans: usize,
    pub nf_db: f64,
    pub carrier_hz: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        FiberParams {
            alpha_db_per_km: 0.2,
            beta2_ps2_per_km: -21.7,
            gamma_per_w_km: 1.3,
            span_km: 100.0,
            n_spans: 25,
            nf_db: 4.5,
            carrier_hz: 193.41e12,
        }
    }
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_db_per_km >= 0.0) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        if !(self.span_km > 0.0) {
            return Err(Error::invalid("span length must be positive"));
        }
        if self.n_spans == 0 {
            return Err(Error::invalid("at least one span is required"));
        }
        Ok(())
    }

    /// Power attenuation coefficient in 1/km.
    pub fn alpha_per_km(&self) -> f64 {
        alpha_linear(self.alpha_db_per_km)
    }

    pub fn beta2_s2_per_km(&self) -> f64 {
        self.beta2_ps2_per_km * 1e-24
    }

    /// EDFA gain that exactly restores one span's loss.
    pub fn span_gain_db(&self) -> f64 {
        self.alpha_db_per_km * self.span_km
    }

    pub fn total_km(&self) -> f64 {
        self.span_km * self.n_spans as f64
    }
}

fn alpha_linear(alpha_db_per_km: f64) -> f64 {
    alpha_db_per_km * std::f64::consts::LN_10 / 10.0
}

/// Effective nonlinear length of a segment of length `len_km`.
pub fn effective_length(alpha_per_km: f64, len_km: f64) -> f64 {
    let x = alpha_per_km * len_km;
    if x.abs() < 1e-12 {
        len_km
    } else {
        -(-x).exp_m1() / alpha_per_km
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepScheme {
    Uniform,
    Logarithmic,
}

/// Step boundaries within one span.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    boundaries: Vec<f64>,
    scheme: StepScheme,
}

impl StepGrid {
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn scheme(&self) -> StepScheme {
        self.scheme
    }

    pub fn span_km(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// (start, length) of every step.
    pub fn steps(&self) -> impl DoubleEndedIterator<Item = (f64, f64)> + '_ {
        self.boundaries.windows(2).map(|w| (w[0], w[1] - w[0]))
    }
}

pub fn uniform_step_grid(span_km: f64, n_steps: usize) -> Result<StepGrid> {
    if n_steps == 0 || !(span_km > 0.0) {
        return Err(Error::invalid("need at least one step over a positive span"));
    }
    let mut boundaries: Vec<f64> = (0..=n_steps).map(|k| span_km * k as f64 / n_steps as f64).collect();
    boundaries[n_steps] = span_km;
    Ok(StepGrid { boundaries, scheme: StepScheme::Uniform })
}

/// Logarithmic grid: every step dissipates the same fraction of the signal
/// power. Degenerates to uniform spacing without loss.
pub fn log_step_grid(span_km: f64, n_steps: usize, alpha_db_per_km: f64) -> Result<StepGrid> {
    if n_steps == 0 || !(span_km > 0.0) {
        return Err(Error::invalid("need at least one step over a positive span"));
    }
    let a = alpha_linear(alpha_db_per_km);
    if a * span_km < 1e-12 {
        let mut g = uniform_step_grid(span_km, n_steps)?;
        g.scheme = StepScheme::Logarithmic;
        return Ok(g);
    }
    let total_loss = -(-a * span_km).exp_m1();
    let mut boundaries: Vec<f64> = (0..=n_steps)
        .map(|k| -(1.0 - k as f64 / n_steps as f64 * total_loss).ln() / a)
        .collect();
    boundaries[0] = 0.0;
    boundaries[n_steps] = span_km;
    Ok(StepGrid { boundaries, scheme: StepScheme::Logarithmic })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdSign {
    /// `exp(+j beta2 xi w^2 / 2)`: undoes the fiber.
    Compensate,
    /// `exp(-j beta2 xi w^2 / 2)`: the fiber itself.
    Forward,
}

impl CdSign {
    pub fn value(self) -> f64 {
        match self {
            CdSign::Compensate => 1.0,
            CdSign::Forward => -1.0,
        }
    }
}

/// Exact (circular) chromatic dispersion over `xi_km`.
pub fn cd_exact(signal: &ComplexSignal, xi_km: f64, beta2_ps2_per_km: f64, sign: CdSign) -> Result<ComplexSignal> {
    if signal.len() < 2 {
        return Err(Error::invalid("dispersion needs at least two samples"));
    }
    let mut field = BandField::new(signal.samples().to_vec(), signal.sample_rate(), beta2_ps2_per_km * 1e-24);
    field.disperse(xi_km, sign.value());
    Ok(ComplexSignal::from_parts(field.samples, signal.sample_rate(), signal.t0_offset()))
}

/// Kerr phase rotation `u exp(j gamma l_eff |u|^2)`.
pub fn kerr_rotate(signal: &ComplexSignal, gamma_per_w_km: f64, l_eff_km: f64) -> ComplexSignal {
    let coeff = gamma_per_w_km * l_eff_km;
    signal.clone().map_samples(|mut s| {
        kerr_in_place(&mut s, coeff);
        s
    })
}

fn kerr_in_place(samples: &mut [C64], coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for u in samples.iter_mut() {
        *u *= C64::cis(coeff * u.norm_sqr());
    }
}

/// Per-sample ASE variance (both quadratures) of a lumped amplifier.
pub fn ase_variance(gain_db: f64, nf_db: f64, carrier_hz: f64, sample_rate: f64) -> f64 {
    let gain = 10f64.powf(gain_db / 10.0);
    let n_sp = 10f64.powf(nf_db / 10.0) / 2.0;
    n_sp * (gain - 1.0) * PLANCK * carrier_hz * sample_rate
}

fn add_ase(samples: &mut [C64], variance: f64, rng: &mut impl Rng) {
    let sd = (variance / 2.0).sqrt();
    for u in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *u += C64::new(re, im) * sd;
    }
}

/// Lumped amplifier: field gain `10^(gain/20)` plus white circular ASE.
pub fn edfa(signal: &ComplexSignal, gain_db: f64, nf_db: f64, carrier_hz: f64, seed: u64) -> Result<ComplexSignal> {
    if !(gain_db >= 0.0) {
        return Err(Error::invalid("amplifier gain must be non-negative"));
    }
    let var = ase_variance(gain_db, nf_db, carrier_hz, signal.sample_rate());
    let amp = 10f64.powf(gain_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(signal.clone().map_samples(|mut s| {
        s.iter_mut().for_each(|u| *u *= amp);
        add_ase(&mut s, var, &mut rng);
        s
    }))
}

/// A field that the split-step driver can propagate.
pub(crate) trait SplitStepField {
    /// Multiply the spectrum by `exp(j sign beta2 xi w^2 / 2)`.
    fn disperse(&mut self, xi_km: f64, sign: f64);
    /// Kerr rotation with `coeff = +-gamma * l_eff`.
    fn kerr(&mut self, coeff: f64);
    fn scale(&mut self, factor: f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Backward,
}

/// Propagate one span in either direction; the backward pass is the exact
/// inverse of the forward discretisation on the same grid.
pub(crate) fn propagate_span<F: SplitStepField>(field: &mut F, fiber: &FiberParams, grid: &StepGrid, gamma: f64, dir: Direction) {
    let a = fiber.alpha_per_km();
    let mut pending = 0.0;
    match dir {
        Direction::Forward => {
            for (_, len) in grid.steps() {
                field.disperse(pending + len / 2.0, CdSign::Forward.value());
                field.kerr(gamma * effective_length(a, len));
                field.scale((-a * len / 2.0).exp());
                pending = len / 2.0;
            }
            field.disperse(pending, CdSign::Forward.value());
        }
        Direction::Backward => {
            for (_, len) in grid.steps().rev() {
                field.disperse(pending + len / 2.0, CdSign::Compensate.value());
                field.scale((a * len / 2.0).exp());
                field.kerr(-gamma * effective_length(a, len));
                pending = len / 2.0;
            }
            field.disperse(pending, CdSign::Compensate.value());
        }
    }
}

/// Full-band field with its FFT plan and squared frequency grid.
pub(crate) struct BandField {
    pub(crate) samples: Vec<C64>,
    fft: FftPair,
    omega_sq: Vec<f64>,
    beta2_s2_per_km: f64,
}

impl BandField {
    pub(crate) fn new(samples: Vec<C64>, sample_rate: f64, beta2_s2_per_km: f64) -> Self {
        let n = samples.len();
        let omega_sq = angular_frequencies(n, sample_rate).into_iter().map(|w| w * w).collect();
        BandField { samples, fft: FftPair::new(n), omega_sq, beta2_s2_per_km }
    }
}

impl SplitStepField for BandField {
    fn disperse(&mut self, xi_km: f64, sign: f64) {
        if xi_km == 0.0 || self.beta2_s2_per_km == 0.0 {
            return;
        }
        let kappa = sign * self.beta2_s2_per_km * xi_km / 2.0;
        self.fft.forward(&mut self.samples);
        for (u, w2) in self.samples.iter_mut().zip(&self.omega_sq) {
            *u *= C64::cis(kappa * w2);
        }
        self.fft.inverse(&mut self.samples);
    }

    fn kerr(&mut self, coeff: f64) {
        kerr_in_place(&mut self.samples, coeff);
    }

    fn scale(&mut self, factor: f64) {
        for u in self.samples.iter_mut() {
            *u *= factor;
        }
    }
}

/// Forward split-step propagation over all spans, EDFA after each span.
/// `noise_seed = None` disables ASE.
pub fn ssfm_propagate(
    signal: &ComplexSignal,
    fiber: &FiberParams,
    grid: &StepGrid,
    samples_per_symbol: usize,
    noise_seed: Option<u64>,
) -> Result<ComplexSignal> {
    fiber.validate()?;
    if (grid.span_km() - fiber.span_km).abs() > 1e-9 {
        return Err(Error::inconsistent(format!(
            "step grid covers {} km but spans are {} km",
            grid.span_km(),
            fiber.span_km
        )));
    }
    if samples_per_symbol < 4 {
        log::warn!("{samples_per_symbol} samples/symbol may not capture nonlinear spectral broadening");
    }
    let rate = signal.sample_rate();
    let mut field = BandField::new(signal.samples().to_vec(), rate, fiber.beta2_s2_per_km());
    let amp = 10f64.powf(fiber.span_gain_db() / 20.0);
    let ase = ase_variance(fiber.span_gain_db(), fiber.nf_db, fiber.carrier_hz, rate);
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    for _ in 0..fiber.n_spans {
        propagate_span(&mut field, fiber, grid, fiber.gamma_per_w_km, Direction::Forward);
        field.scale(amp);
        if let Some(rng) = rng.as_mut() {
            add_ase(&mut field.samples, ase, rng);
        }
    }
    Ok(ComplexSignal::from_parts(field.samples, rate, signal.t0_offset()))
}

/// Ideal split-step backpropagation with `stps` logarithmic steps per span.
pub fn full_dbp_baseline(
    signal: &ComplexSignal,
    fiber: &FiberParams,
    stps: usize,
    samples_per_symbol: usize,
) -> Result<ComplexSignal> {
    fiber.validate()?;
    if samples_per_symbol < 2 {
        return Err(Error::invalid("backpropagation needs at least 2 samples/symbol"));
    }
    let grid = log_step_grid(fiber.span_km, stps, fiber.alpha_db_per_km)?;
    let rate = signal.sample_rate();
    let mut field = BandField::new(signal.samples().to_vec(), rate, fiber.beta2_s2_per_km());
    let inv_amp = 10f64.powf(-fiber.span_gain_db() / 20.0);
    for _ in 0..fiber.n_spans {
        field.scale(inv_amp);
        propagate_span(&mut field, fiber, &grid, fiber.gamma_per_w_km, Direction::Backward);
    }
    Ok(ComplexSignal::from_parts(field.samples, rate, signal.t0_offset()))
}

/// Linear equalisation: exact dispersion compensation over the whole link.
pub fn linear_equalize(signal: &ComplexSignal, fiber: &FiberParams) -> Result<ComplexSignal> {
    cd_exact(signal, fiber.total_km(), fiber.beta2_ps2_per_km, CdSign::Compensate)
}
