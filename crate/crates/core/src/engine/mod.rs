//! Subband time-domain digital backpropagation.
//!
//! Each step applies a shared short CD filter to every subband, compensates
//! the walk-off between subbands with integer delay lines, filters the
//! subband intensities with a sparse MIMO polynomial matrix and rotates each
//! subband by the result. Step sizes are multiples of the distance `delta` at
//! which neighbouring subbands walk off by exactly one subband sample, so no
//! fractional delays are needed inside the loop; the remainder of the last
//! step and the constant per-subband phases are applied once at the end.
//!
//! Delay-line layout per step (`w_i` the normalised walk-off delays, `W` their
//! maximum): intensities are taken after the walk-off delays, the causal MIMO
//! output of row `i` is delayed by `w_i`, and all fields by `W`, so row `i`
//! sees intensity lags in `[-(W - w_i), w_i]` relative to itself.

mod fd;
mod kernels;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::FiberParams;
use crate::filterbank::{analyze, synthesize, FilterBankSpec, SubbandSet};
use crate::signal::ComplexSignal;
use crate::{Error, Result, C64};

pub use fd::fd_subband_dbp_baseline;
pub use kernels::{apply_cd, fractional_delay_taps, nonlinear_phase_rotate};
pub(crate) use kernels::{cd_folded, delay, fir_real, intensity, mimo_factor_apply};

/// Taps of the per-subband fractional-delay filters.
pub const FRAC_TAPS: usize = 8;
/// Integer group delay of the fractional-delay filters.
pub const FRAC_CENTER: usize = FRAC_TAPS / 2 - 1;

/// Step size `delta = N K T^2 / (2 pi |beta2|)` in km and the subband sampling
/// interval `K T` in seconds.
pub fn compute_delta(n_subbands: usize, downsample: usize, base_rate: f64, beta2_ps2_per_km: f64) -> Result<(f64, f64)> {
    if beta2_ps2_per_km == 0.0 {
        return Err(Error::invalid("walk-off step is undefined without dispersion"));
    }
    let t = 1.0 / base_rate;
    let beta2 = beta2_ps2_per_km.abs() * 1e-24;
    let delta = (n_subbands * downsample) as f64 * t * t / (2.0 * PI * beta2);
    Ok((delta, downsample as f64 * t))
}

/// Walk-off `t_i / T_sub = -beta2 xi w_i / (K T)` split into an integer number
/// of subband samples and a fractional remainder in `[0, 1)`.
pub fn walk_off_delay(
    i: i64,
    xi_km: f64,
    beta2_ps2_per_km: f64,
    n_subbands: usize,
    base_rate: f64,
    downsample: usize,
) -> (i64, f64) {
    let t = 1.0 / base_rate;
    let omega = 2.0 * PI * i as f64 / (n_subbands as f64 * t);
    let v = -beta2_ps2_per_km * 1e-24 * xi_km * omega / (downsample as f64 * t);
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        return (r as i64, 0.0);
    }
    let f = v.floor();
    (f as i64, v - f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    /// Uniform steps as `(xi_km, multiple of delta)`.
    pub steps: Vec<(f64, usize)>,
    /// Final step not aligned to `delta` (0 if none).
    pub residual_km: f64,
    pub delta_km: f64,
}

impl StepPlan {
    /// Distances of all steps in processing order, residual last.
    pub fn distances(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.steps.iter().map(|s| s.0).collect();
        if self.residual_km > 0.0 {
            d.push(self.residual_km);
        }
        d
    }

    /// Number of steps `M`.
    pub fn n_steps(&self) -> usize {
        self.steps.len() + usize::from(self.residual_km > 0.0)
    }

    pub fn total_km(&self) -> f64 {
        self.distances().iter().sum()
    }
}

/// `floor(total / (m delta))` steps of `m delta` plus a residual step.
pub fn plan_steps(total_km: f64, delta_km: f64, multiple: usize) -> Result<StepPlan> {
    if !(total_km > 0.0) || multiple == 0 || !(delta_km > 0.0) {
        return Err(Error::invalid("need positive distance, delta and step multiple"));
    }
    let xi = multiple as f64 * delta_km;
    let mut count = (total_km / xi).floor() as usize;
    let mut residual = total_km - count as f64 * xi;
    if residual > xi - 1e-9 {
        count += 1;
        residual = 0.0;
    }
    if residual < 1e-9 {
        residual = 0.0;
    }
    Ok(StepPlan { steps: vec![(xi, multiple); count], residual_km: residual, delta_km })
}

/// Real multiplications per output sample of a symmetric `2L+1`-tap complex
/// filter.
pub fn cd_rm(half_len: usize) -> usize {
    4 * (half_len + 1)
}

/// MIMO coefficient capacity `F |S|^2 (O/F + 1) M`.
pub fn mimo_capacity(n_active: usize, order: usize, n_factors: usize, n_steps: usize) -> usize {
    n_factors * n_active * n_active * (order / n_factors + 1) * n_steps
}

/// Symmetric complex FIR `taps[L+k] = taps[L-k]`, stored as the `L+1` free taps.
#[derive(Debug, Clone, PartialEq)]
pub struct CdFilter {
    half: Vec<C64>,
    pub xi_km: f64,
}

impl CdFilter {
    pub fn from_half(half: Vec<C64>, xi_km: f64) -> Result<Self> {
        if half.is_empty() {
            return Err(Error::invalid("CD filter needs at least one tap"));
        }
        Ok(CdFilter { half, xi_km })
    }

    pub fn identity(half_len: usize) -> Self {
        let mut half = vec![C64::new(0.0, 0.0); half_len + 1];
        half[0] = C64::new(1.0, 0.0);
        CdFilter { half, xi_km: 0.0 }
    }

    /// Free taps `h_0 .. h_L`.
    pub fn half(&self) -> &[C64] {
        &self.half
    }

    pub fn half_len(&self) -> usize {
        self.half.len() - 1
    }

    /// All `2L+1` taps.
    pub fn taps(&self) -> Vec<C64> {
        self.half[1..].iter().rev().chain(self.half.iter()).copied().collect()
    }

    /// Zero-phase frequency response at `w` rad/sample.
    pub fn response(&self, w: f64) -> C64 {
        self.half
            .iter()
            .enumerate()
            .map(|(d, h)| if d == 0 { *h } else { *h * (2.0 * (w * d as f64).cos()) })
            .sum()
    }

    pub fn rm_per_output(&self) -> usize {
        cd_rm(self.half_len())
    }
}

/// Frequency weighting for least-squares CD design: 1 up to `taper_start_hz`,
/// a raised-cosine taper down to `band_edge_hz` (the shape of the squared
/// prototype response) and `out_of_band` beyond it up to the Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyWeight {
    pub taper_start_hz: f64,
    pub band_edge_hz: f64,
    pub out_of_band: f64,
}

impl FrequencyWeight {
    pub fn brickwall(band_edge_hz: f64, out_of_band: f64) -> Self {
        FrequencyWeight { taper_start_hz: band_edge_hz, band_edge_hz, out_of_band }
    }

    pub fn at(&self, hz: f64) -> f64 {
        let hz = hz.abs();
        if hz <= self.taper_start_hz {
            1.0
        } else if hz < self.band_edge_hz {
            let x = (hz - self.taper_start_hz) / (self.band_edge_hz - self.taper_start_hz);
            (0.5 + 0.5 * (PI * x).cos()).max(self.out_of_band)
        } else {
            self.out_of_band
        }
    }
}

pub(crate) const CD_GRID: usize = 512;

/// Grid (rad/sample), weights and target response `exp(j beta2 xi W^2 / 2)`.
pub(crate) fn cd_design_grid(
    xi_km: f64,
    beta2_ps2_per_km: f64,
    subband_rate: f64,
    weight: &FrequencyWeight,
) -> Vec<(f64, f64, C64)> {
    let kappa = beta2_ps2_per_km * 1e-24 * xi_km / 2.0;
    (0..CD_GRID)
        .map(|g| {
            let w = PI * g as f64 / (CD_GRID - 1) as f64;
            let omega = w * subband_rate;
            (w, weight.at(omega / (2.0 * PI)), C64::cis(kappa * omega * omega))
        })
        .collect()
}

/// Weighted least-squares symmetric FIR approximation of CD compensation over
/// `xi_km`.
pub fn ls_cd_filter(
    xi_km: f64,
    beta2_ps2_per_km: f64,
    half_len: usize,
    subband_rate: f64,
    weight: &FrequencyWeight,
) -> Result<CdFilter> {
    if half_len == 0 {
        return Err(Error::invalid("CD filter needs 2L+1 >= 3 taps"));
    }
    let grid = cd_design_grid(xi_km, beta2_ps2_per_km, subband_rate, weight);
    let n = half_len + 1;
    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs_re = DVector::<f64>::zeros(n);
    let mut rhs_im = DVector::<f64>::zeros(n);
    for (w, wt, target) in &grid {
        let row: Vec<f64> = (0..n).map(|d| if d == 0 { 1.0 } else { 2.0 * (w * d as f64).cos() }).collect();
        for a in 0..n {
            rhs_re[a] += wt * row[a] * target.re;
            rhs_im[a] += wt * row[a] * target.im;
            for b in 0..n {
                normal[(a, b)] += wt * row[a] * row[b];
            }
        }
    }
    let chol = normal.cholesky().ok_or(Error::Singular)?;
    let re = chol.solve(&rhs_re);
    let im = chol.solve(&rhs_im);
    let half = (0..n).map(|d| C64::new(re[d], im[d])).collect();
    Ok(CdFilter { half, xi_km })
}

/// Cascade of `F` real polynomial matrices of order `o` each, with sparsity
/// masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoFilterFactors {
    n: usize,
    order: usize,
    coeffs: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
}

impl MimoFilterFactors {
    pub fn zeros(n_active: usize, n_factors: usize, factor_order: usize) -> Self {
        let size = n_active * n_active * (factor_order + 1);
        MimoFilterFactors {
            n: n_active,
            order: factor_order,
            coeffs: vec![vec![0.0; size]; n_factors],
            masks: vec![vec![true; size]; n_factors],
        }
    }

    /// Every factor the identity at lag 0, so the cascade passes `a` through.
    pub fn identity(n_active: usize, n_factors: usize, factor_order: usize) -> Self {
        let mut m = Self::zeros(n_active, n_factors, factor_order);
        for f in 0..n_factors {
            for i in 0..n_active {
                m.set(f, i, i, 0, 1.0);
            }
        }
        m
    }

    /// Zero-mean uniform coefficients in `[-scale, scale]`.
    pub fn random(n_active: usize, n_factors: usize, factor_order: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(n_active, n_factors, factor_order);
        for c in m.coeffs.iter_mut().flatten() {
            *c = rng.random_range(-scale..=scale);
        }
        m
    }

    pub fn from_coeffs(n_active: usize, factor_order: usize, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let size = n_active * n_active * (factor_order + 1);
        if let Some(c) = coeffs.iter().find(|c| c.len() != size) {
            return Err(Error::LengthMismatch { expected: size, actual: c.len() });
        }
        let masks = vec![vec![true; size]; coeffs.len()];
        Ok(MimoFilterFactors { n: n_active, order: factor_order, coeffs, masks })
    }

    pub fn n_active(&self) -> usize {
        self.n
    }

    pub fn n_factors(&self) -> usize {
        self.coeffs.len()
    }

    /// Order of each factor (`O / F`).
    pub fn factor_order(&self) -> usize {
        self.order
    }

    /// Order of the composed matrix `O`.
    pub fn total_order(&self) -> usize {
        self.order * self.coeffs.len()
    }

    fn index(&self, i: usize, j: usize, d: usize) -> usize {
        (i * self.n + j) * (self.order + 1) + d
    }

    pub fn get(&self, factor: usize, i: usize, j: usize, d: usize) -> f64 {
        self.coeffs[factor][self.index(i, j, d)]
    }

    pub fn set(&mut self, factor: usize, i: usize, j: usize, d: usize, v: f64) {
        let idx = self.index(i, j, d);
        self.coeffs[factor][idx] = v;
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.coeffs
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub(crate) fn set_masks(&mut self, masks: Vec<Vec<bool>>) {
        self.masks = masks;
    }

    /// Coefficients that are both unmasked and nonzero.
    pub fn nonzero_count(&self) -> usize {
        self.coeffs
            .iter()
            .zip(&self.masks)
            .map(|(c, m)| c.iter().zip(m).filter(|(v, k)| **k && **v != 0.0).count())
            .sum()
    }

    pub fn capacity(&self) -> usize {
        self.coeffs.iter().map(Vec::len).sum()
    }

    /// Real multiplications per subband per output sample.
    pub fn rm_per_output(&self) -> f64 {
        self.nonzero_count() as f64 / self.n as f64
    }

    /// Dense polynomial matrix of order `O`, indexed `[i][j][d]`.
    pub fn compose(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.n;
        let mut acc: Vec<Vec<Vec<f64>>> =
            (0..n).map(|i| (0..n).map(|j| vec![if i == j { 1.0 } else { 0.0 }]).collect()).collect();
        for f in 0..self.coeffs.len() {
            let len = acc[0][0].len() + self.order;
            let mut next = vec![vec![vec![0.0; len]; n]; n];
            for i in 0..n {
                for k in 0..n {
                    for d in 0..=self.order {
                        let idx = self.index(i, k, d);
                        if !self.masks[f][idx] {
                            continue;
                        }
                        let g = self.coeffs[f][idx];
                        for j in 0..n {
                            for (e, v) in acc[k][j].iter().enumerate() {
                                next[i][j][d + e] += g * v;
                            }
                        }
                    }
                }
            }
            acc = next;
        }
        acc
    }
}

/// Apply the factor cascade to the subband intensities.
pub fn mimo_intensity_filter(factors: &MimoFilterFactors, a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if a.len() != factors.n {
        return Err(Error::LengthMismatch { expected: factors.n, actual: a.len() });
    }
    let len = a[0].len();
    if let Some(x) = a.iter().find(|x| x.len() != len) {
        return Err(Error::LengthMismatch { expected: len, actual: x.len() });
    }
    let mut v = a.to_vec();
    for (c, m) in factors.coeffs.iter().zip(&factors.masks) {
        v = mimo_factor_apply(&v, c, m, factors.order);
    }
    Ok(v)
}

/// Structural engine configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSpec {
    pub n_subbands: usize,
    pub downsample: usize,
    pub half_width: usize,
    pub rolloff: f64,
    pub prototype_len: usize,
    /// Uniform steps are this multiple of `delta`.
    pub step_multiple: usize,
    /// CD filters have `2L+1` taps.
    pub cd_half_len: usize,
    pub mimo_factors: usize,
}

impl Default for EngineSpec {
    fn default() -> Self {
        EngineSpec {
            n_subbands: 12,
            downsample: 8,
            half_width: 3,
            rolloff: 0.45,
            prototype_len: 129,
            step_multiple: 2,
            cd_half_len: 3,
            mimo_factors: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepDelays {
    /// Normalised walk-off delay of each subband.
    pub walk: Vec<usize>,
    /// Largest walk-off delay `W`.
    pub max: usize,
    /// Common offset added by the normalisation (`-min n_i`).
    pub common: usize,
}

/// Everything about the datapath that is fixed by the configuration: step
/// plan, delay lines, filter orders and the initial cleanup values.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineLayout {
    pub spec: EngineSpec,
    pub base_rate: f64,
    pub beta2_ps2_per_km: f64,
    pub plan: StepPlan,
    /// Order of each MIMO factor.
    pub factor_order: usize,
    pub(crate) steps: Vec<StepDelays>,
    /// Integer delay of each subband ahead of its fractional-delay filter.
    pub(crate) final_delays: Vec<usize>,
    /// Fractional walk-off left for the `F_i` filters.
    pub fractions: Vec<f64>,
    /// Accumulated constant phase `sum beta2 xi w_i^2 / 2` of each subband.
    pub phases: Vec<f64>,
}

impl EngineLayout {
    /// Layout for backpropagating the whole link of `fiber`.
    pub fn new(spec: &EngineSpec, base_rate: f64, fiber: &FiberParams) -> Result<Self> {
        let (delta, _) = compute_delta(spec.n_subbands, spec.downsample, base_rate, fiber.beta2_ps2_per_km)?;
        let plan = plan_steps(fiber.total_km(), delta, spec.step_multiple)?;
        Self::with_plan(spec, base_rate, fiber.beta2_ps2_per_km, plan)
    }

    pub fn with_plan(spec: &EngineSpec, base_rate: f64, beta2_ps2_per_km: f64, plan: StepPlan) -> Result<Self> {
        if spec.mimo_factors == 0 || spec.step_multiple == 0 {
            return Err(Error::invalid("need at least one MIMO factor and a positive step multiple"));
        }
        let n_active = 2 * spec.half_width + 1;
        // every step, the residual one included, gets the MIMO order of a full step
        let order_needed = spec.step_multiple * (n_active - 1);
        let factor_order = order_needed.div_ceil(spec.mimo_factors);
        let s = spec.half_width as i64;
        let mut steps = Vec::new();
        let mut carried = vec![0.0; n_active];
        for xi in plan.distances() {
            let delays: Vec<(i64, f64)> = (-s..=s)
                .map(|i| walk_off_delay(i, xi, beta2_ps2_per_km, spec.n_subbands, base_rate, spec.downsample))
                .collect();
            let min = delays.iter().map(|d| d.0).min().unwrap();
            let walk: Vec<usize> = delays.iter().map(|d| (d.0 - min) as usize).collect();
            let max = *walk.iter().max().unwrap();
            if max > factor_order * spec.mimo_factors {
                return Err(Error::inconsistent(format!(
                    "step of {xi} km walks off {max} samples, beyond MIMO order {}",
                    factor_order * spec.mimo_factors
                )));
            }
            for (c, d) in carried.iter_mut().zip(&delays) {
                *c += d.1;
            }
            steps.push(StepDelays { walk, max, common: (-min) as usize });
        }
        let final_delays: Vec<usize> = carried.iter().map(|c| (c + 1e-9).floor() as usize).collect();
        let fractions: Vec<f64> = carried
            .iter()
            .zip(&final_delays)
            .map(|(c, d)| (c - *d as f64).max(0.0))
            .collect();
        let t = 1.0 / base_rate;
        let total = plan.total_km();
        let phases = (-s..=s)
            .map(|i| {
                let w = 2.0 * PI * i as f64 / (spec.n_subbands as f64 * t);
                beta2_ps2_per_km * 1e-24 * total * w * w / 2.0
            })
            .collect();
        Ok(EngineLayout {
            spec: spec.clone(),
            base_rate,
            beta2_ps2_per_km,
            plan,
            factor_order,
            steps,
            final_delays,
            fractions,
            phases,
        })
    }

    pub fn n_active(&self) -> usize {
        2 * self.spec.half_width + 1
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn subband_rate(&self) -> f64 {
        self.base_rate / self.spec.downsample as f64
    }

    /// Common delay (subband samples) added by the engine.
    pub fn engine_delay(&self) -> usize {
        let per_step: usize = self.steps.iter().map(|s| self.spec.cd_half_len + s.common + s.max).sum();
        per_step + FRAC_CENTER
    }

    /// Band edge of the prototype, used as the CD design band.
    pub fn cd_weight(&self) -> FrequencyWeight {
        let half_spacing = self.base_rate / (2.0 * self.spec.n_subbands as f64);
        FrequencyWeight {
            taper_start_hz: (1.0 - self.spec.rolloff) * half_spacing,
            band_edge_hz: (1.0 + self.spec.rolloff) * half_spacing,
            out_of_band: 1e-2,
        }
    }

    /// Per-step least-squares CD filters.
    pub fn ls_cd_filters(&self) -> Result<Vec<CdFilter>> {
        let weight = self.cd_weight();
        self.plan
            .distances()
            .into_iter()
            .map(|xi| ls_cd_filter(xi, self.beta2_ps2_per_km, self.spec.cd_half_len, self.subband_rate(), &weight))
            .collect()
    }

    pub fn filter_bank(&self) -> Result<FilterBankSpec> {
        FilterBankSpec::with_prototype(
            self.spec.n_subbands,
            self.spec.downsample,
            self.spec.half_width,
            self.spec.rolloff,
            self.spec.prototype_len,
            self.base_rate,
        )
    }
}

/// All trainable quantities of the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct DbpParams {
    pub layout: EngineLayout,
    pub bank: FilterBankSpec,
    pub cd: Vec<CdFilter>,
    pub mimo: Vec<MimoFilterFactors>,
    /// `F_i` taps, one row per subband.
    pub frac_delay: Vec<Vec<f64>>,
    /// Final constant phase of each subband.
    pub phase: Vec<f64>,
}

impl DbpParams {
    /// Parameters with Lagrange `F_i` and analytic phases from the layout.
    pub fn new(
        layout: EngineLayout,
        bank: FilterBankSpec,
        cd: Vec<CdFilter>,
        mimo: Vec<MimoFilterFactors>,
    ) -> Result<Self> {
        let frac_delay = layout
            .fractions
            .iter()
            .map(|mu| fractional_delay_taps(*mu, FRAC_TAPS))
            .collect::<Result<Vec<_>>>()?;
        let phase = layout.phases.clone();
        let p = DbpParams { layout, bank, cd, mimo, frac_delay, phase };
        p.validate()?;
        Ok(p)
    }

    /// LS CD filters, designed prototypes and all-zero MIMO filters: a purely
    /// linear subband equaliser.
    pub fn linear(layout: EngineLayout) -> Result<Self> {
        let bank = layout.filter_bank()?;
        let cd = layout.ls_cd_filters()?;
        let mimo = (0..layout.n_steps())
            .map(|_| MimoFilterFactors::zeros(layout.n_active(), layout.spec.mimo_factors, layout.factor_order))
            .collect();
        DbpParams::new(layout, bank, cd, mimo)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        let m = l.n_steps();
        if self.cd.len() != m || self.mimo.len() != m {
            return Err(Error::inconsistent(format!(
                "{m} steps planned but {} CD and {} MIMO filters given",
                self.cd.len(),
                self.mimo.len()
            )));
        }
        if self.bank.n_subbands() != l.spec.n_subbands
            || self.bank.downsample() != l.spec.downsample
            || self.bank.half_width() != l.spec.half_width
        {
            return Err(Error::inconsistent("filter bank geometry differs from the engine layout"));
        }
        for f in &self.cd {
            if f.half_len() != l.spec.cd_half_len {
                return Err(Error::inconsistent("CD filter length differs from the layout"));
            }
        }
        for g in &self.mimo {
            if g.n_active() != l.n_active() || g.factor_order() != l.factor_order || g.n_factors() != l.spec.mimo_factors {
                return Err(Error::inconsistent("MIMO factor shape differs from the layout"));
            }
        }
        if self.frac_delay.len() != l.n_active() || self.frac_delay.iter().any(|t| t.len() != FRAC_TAPS) {
            return Err(Error::inconsistent("fractional delay filters do not match the active subbands"));
        }
        if self.phase.len() != l.n_active() {
            return Err(Error::inconsistent("phase vector does not match the active subbands"));
        }
        Ok(())
    }

    pub fn mimo_nonzeros(&self) -> usize {
        self.mimo.iter().map(MimoFilterFactors::nonzero_count).sum()
    }

    pub fn mimo_capacity(&self) -> usize {
        self.mimo.iter().map(MimoFilterFactors::capacity).sum()
    }
}

/// Run the subband DBP datapath over all planned steps.
pub fn dbp_process(subbands: &SubbandSet, params: &DbpParams, plan: &StepPlan) -> Result<SubbandSet> {
    let layout = &params.layout;
    if *plan != layout.plan {
        return Err(Error::inconsistent("step plan differs from the one the parameters were built for"));
    }
    params.validate()?;
    if subbands.half_width() != layout.spec.half_width {
        return Err(Error::inconsistent(format!(
            "{} subbands given, engine expects {}",
            subbands.bands().len(),
            layout.n_active()
        )));
    }
    let mut x: Vec<Vec<C64>> = subbands.bands().to_vec();
    let mut t0 = subbands.t0_offset();
    for (l, step) in layout.steps.iter().enumerate() {
        for (b, w) in x.iter_mut().zip(&step.walk) {
            *b = delay(&cd_folded(b, params.cd[l].half()), *w);
        }
        let a: Vec<Vec<f64>> = x.iter().map(|b| intensity(b)).collect();
        let v = mimo_intensity_filter(&params.mimo[l], &a)?;
        for ((b, vi), w) in x.iter_mut().zip(&v).zip(&step.walk) {
            *b = nonlinear_phase_rotate(&delay(b, step.max), &delay(vi, *w));
        }
        t0 += layout.spec.cd_half_len + step.common + step.max;
    }
    for (((b, d), taps), phi) in x.iter_mut().zip(&layout.final_delays).zip(&params.frac_delay).zip(&params.phase) {
        let rot = C64::cis(*phi);
        *b = fir_real(&delay(b, *d), taps).into_iter().map(|v| v * rot).collect();
    }
    t0 += FRAC_CENTER;
    Ok(SubbandSet::from_parts(x, subbands.rate(), t0, subbands.input_offset()))
}

/// Analysis, subband DBP and synthesis of a full-band signal. The output
/// `t0_offset` is the total delay relative to `u`.
pub fn process_signal(u: &ComplexSignal, params: &DbpParams) -> Result<ComplexSignal> {
    let sub = analyze(u, &params.bank)?;
    let out = dbp_process(&sub, params, &params.layout.plan)?;
    synthesize(&out, &params.bank)
}
