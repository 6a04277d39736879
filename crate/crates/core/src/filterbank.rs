//! Uniformly modulated analysis/synthesis filter banks.
//!
//! Subband `i` is centred on `w_i = 2 pi i / (N T)`. Analysis downconverts by
//! `w_i`, filters with the prototype `A` and keeps every `K`-th sample;
//! synthesis upsamples, filters with `S` and upconverts. Modulation is indexed
//! by the absolute input sample, so the modulation tables are periodic in `N`
//! and the two banks cancel exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::signal::{rrc_impulse, ComplexSignal};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBankSpec {
    n_subbands: usize,
    downsample: usize,
    half_width: usize,
    analysis_taps: Vec<f64>,
    synthesis_taps: Vec<f64>,
    base_rate: f64,
}

impl FilterBankSpec {
    pub fn new(
        n_subbands: usize,
        downsample: usize,
        half_width: usize,
        analysis_taps: Vec<f64>,
        synthesis_taps: Vec<f64>,
        base_rate: f64,
    ) -> Result<Self> {
        if n_subbands == 0 || downsample == 0 {
            return Err(Error::invalid("N and K must be positive"));
        }
        if downsample >= n_subbands && n_subbands > 1 {
            return Err(Error::invalid(format!(
                "bank must be oversampled: K = {downsample} is not below N = {n_subbands}"
            )));
        }
        if downsample > n_subbands {
            return Err(Error::invalid("K exceeds N"));
        }
        if 2 * half_width + 1 > n_subbands {
            return Err(Error::invalid(format!(
                "{} active subbands do not fit in N = {n_subbands}",
                2 * half_width + 1
            )));
        }
        for (name, taps) in [("analysis", &analysis_taps), ("synthesis", &synthesis_taps)] {
            if taps.len() % 2 == 0 {
                return Err(Error::invalid(format!("{name} prototype length must be odd")));
            }
            if taps.iter().any(|t| !t.is_finite()) {
                return Err(Error::invalid(format!("{name} prototype has non-finite taps")));
            }
        }
        if !(base_rate > 0.0) {
            return Err(Error::invalid("base rate must be positive"));
        }
        Ok(FilterBankSpec { n_subbands, downsample, half_width, analysis_taps, synthesis_taps, base_rate })
    }

    /// Bank with a designed prototype; synthesis starts as `K` times analysis.
    pub fn with_prototype(
        n_subbands: usize,
        downsample: usize,
        half_width: usize,
        rolloff: f64,
        length: usize,
        base_rate: f64,
    ) -> Result<Self> {
        let a = design_prototype(n_subbands, downsample, rolloff, length)?;
        let s = a.iter().map(|t| t * downsample as f64).collect();
        FilterBankSpec::new(n_subbands, downsample, half_width, a, s, base_rate)
    }

    /// Degenerate single-band bank that passes the signal through unchanged.
    pub fn passthrough(base_rate: f64) -> Result<Self> {
        FilterBankSpec::new(1, 1, 0, vec![1.0], vec![1.0], base_rate)
    }

    pub fn n_subbands(&self) -> usize {
        self.n_subbands
    }

    pub fn downsample(&self) -> usize {
        self.downsample
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn n_active(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn analysis_taps(&self) -> &[f64] {
        &self.analysis_taps
    }

    pub fn synthesis_taps(&self) -> &[f64] {
        &self.synthesis_taps
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn subband_rate(&self) -> f64 {
        self.base_rate / self.downsample as f64
    }

    /// Active subband indices `-S..=S`.
    pub fn indices(&self) -> impl Iterator<Item = i64> {
        let s = self.half_width as i64;
        -s..=s
    }

    /// Centre frequency of subband `i` in rad/s.
    pub fn omega(&self, i: i64) -> f64 {
        2.0 * PI * i as f64 * self.base_rate / self.n_subbands as f64
    }

    pub fn analysis_delay(&self) -> usize {
        (self.analysis_taps.len() - 1) / 2
    }

    pub fn synthesis_delay(&self) -> usize {
        (self.synthesis_taps.len() - 1) / 2
    }

    /// Base-rate delay from analysis input to synthesis output when the
    /// subbands were delayed by `t0_sub` subband samples in between.
    pub fn round_trip_delay(&self, t0_sub: usize) -> usize {
        self.analysis_delay() + self.synthesis_delay() + self.downsample * t0_sub
    }

    /// Replace both prototypes (e.g. with trained values) keeping lengths.
    pub fn with_taps(&self, analysis: Vec<f64>, synthesis: Vec<f64>) -> Result<Self> {
        if analysis.len() != self.analysis_taps.len() || synthesis.len() != self.synthesis_taps.len() {
            return Err(Error::LengthMismatch {
                expected: self.analysis_taps.len(),
                actual: analysis.len(),
            });
        }
        FilterBankSpec::new(self.n_subbands, self.downsample, self.half_width, analysis, synthesis, self.base_rate)
    }
}

/// Largest rolloff for which the prototype band edge stays below half the
/// subband sampling rate.
pub fn max_rolloff(n_subbands: usize, downsample: usize) -> f64 {
    n_subbands as f64 / downsample as f64 - 1.0
}

/// Real symmetric lowpass prototype with cutoff `1/(2 N T)` and unit DC gain.
///
/// The taps start from a root-raised-cosine response (so that analysis
/// followed by synthesis has a raised-cosine response per subband) and are
/// then refined by Levenberg-Marquardt so that the squared responses of
/// neighbouring subbands sum to one and the stopband beyond
/// `(1 + rolloff)/(2 N T)` is suppressed.
pub fn design_prototype(n_subbands: usize, downsample: usize, rolloff: f64, length: usize) -> Result<Vec<f64>> {
    if n_subbands == 0 || downsample == 0 {
        return Err(Error::invalid("N and K must be positive"));
    }
    if length % 2 == 0 {
        return Err(Error::invalid("prototype length must be odd"));
    }
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::invalid(format!("rolloff {rolloff} outside [0, 1]")));
    }
    let edge = (1.0 + rolloff) / (2.0 * n_subbands as f64);
    let limit = 1.0 / (2.0 * downsample as f64);
    if edge > limit + 1e-12 {
        return Err(Error::Aliasing {
            downsample,
            edge,
            limit,
            max_rolloff: max_rolloff(n_subbands, downsample),
        });
    }
    if length == 1 {
        return Ok(vec![1.0]);
    }
    let mut taps = rrc_impulse(rolloff, n_subbands as f64, length);
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    let centre = (length - 1) / 2;
    let half = refine_prototype(&taps[centre..], n_subbands, rolloff)?;
    let mut out: Vec<f64> = half[1..].iter().rev().chain(half.iter()).copied().collect();
    let dc: f64 = out.iter().sum();
    out.iter_mut().for_each(|t| *t /= dc);
    Ok(out)
}

/// Cosine-series response `A(f) = h0 + 2 sum h_k cos(2 pi f k)` basis row.
fn cosine_row(f: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if k == 0 { 1.0 } else { 2.0 * (2.0 * PI * f * k as f64).cos() })
}

fn refine_prototype(half: &[f64], n_subbands: usize, rolloff: f64) -> Result<Vec<f64>> {
    let n = half.len();
    let nf = n_subbands as f64;
    let pass: Vec<f64> = (0..150).map(|j| j as f64 / 149.0 / (2.0 * nf)).collect();
    let stop_start = (1.0 + rolloff) / (2.0 * nf);
    let stop: Vec<f64> = (0..1500).map(|j| stop_start + (0.5 - stop_start) * j as f64 / 1499.0).collect();
    let shifts: Vec<f64> = (-2..=2).map(|i| i as f64 / nf).collect();
    let basis = |fs: &[f64]| -> DMatrix<f64> {
        DMatrix::from_row_iterator(fs.len(), n, fs.iter().flat_map(|&f| cosine_row(f, n)))
    };
    let pass_bases: Vec<DMatrix<f64>> = shifts
        .iter()
        .map(|s| basis(&pass.iter().map(|f| f - s).collect::<Vec<_>>()))
        .collect();
    let stop_basis = basis(&stop);
    let dc_weight = 10.0;
    let n_res = pass.len() + stop.len() + 1;

    let residuals = |p: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut r = DVector::zeros(n_res);
        let mut jac = DMatrix::zeros(n_res, n);
        for b in &pass_bases {
            let a = b * p;
            for row in 0..pass.len() {
                r[row] += a[row] * a[row];
                for col in 0..n {
                    jac[(row, col)] += 2.0 * a[row] * b[(row, col)];
                }
            }
        }
        for row in 0..pass.len() {
            r[row] -= 1.0;
        }
        let s = &stop_basis * p;
        let off = pass.len();
        for row in 0..stop.len() {
            r[off + row] = s[row];
            jac.row_mut(off + row).copy_from(&stop_basis.row(row));
        }
        let last = n_res - 1;
        r[last] = dc_weight * (p[0] + 2.0 * p.rows(1, n - 1).sum() - 1.0);
        for col in 0..n {
            jac[(last, col)] = dc_weight * if col == 0 { 1.0 } else { 2.0 };
        }
        (r, jac)
    };

    let mut p = DVector::from_column_slice(half);
    let (mut r, mut jac) = residuals(&p);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..100 {
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut lhs = jtj.clone();
        for d in 0..n {
            lhs[(d, d)] += mu * jtj[(d, d)].max(1e-12);
        }
        let step = lhs.cholesky().ok_or(Error::Singular)?.solve(&(-g));
        let cand = &p + &step;
        let (r2, j2) = residuals(&cand);
        let c2 = r2.norm_squared();
        if c2 < cost {
            let gain = (cost - c2) / cost;
            p = cand;
            r = r2;
            jac = j2;
            cost = c2;
            mu /= 3.0;
            if gain < 1e-10 {
                break;
            }
        } else {
            mu *= 4.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    Ok(p.iter().copied().collect())
}

/// `exp(sign * j 2 pi i k / N)` for `k < N`.
pub(crate) fn modulation_table(i: i64, n_subbands: usize, sign: f64) -> Vec<C64> {
    let n = n_subbands as i64;
    (0..n)
        .map(|k| C64::cis(sign * 2.0 * PI * (i * k).rem_euclid(n) as f64 / n as f64))
        .collect()
}

/// Analysis of one subband: `y[m] = sum_j A[j] x[mK - j] exp(-j w_i (mK - j) T)`
/// with zero history before the first sample.
pub(crate) fn analyze_band(x: &[C64], taps: &[f64], i: i64, n_subbands: usize, downsample: usize) -> Vec<C64> {
    let rot = modulation_table(i, n_subbands, -1.0);
    let out_len = x.len().div_ceil(downsample);
    (0..out_len)
        .map(|m| {
            let k = m * downsample;
            let mut acc = C64::new(0.0, 0.0);
            for (j, a) in taps.iter().enumerate().take(k + 1) {
                let idx = k - j;
                acc += x[idx] * rot[idx % n_subbands] * *a;
            }
            acc
        })
        .collect()
}

/// Add the synthesis of one subband to `out`. `delay` is the total delay in
/// base-rate samples between the analysis downconversion and this output
/// (prototype group delays plus `K` times any common subband delay); the
/// upconversion is referenced to the input time axis so the phases of
/// analysis and synthesis cancel.
pub(crate) fn synthesize_band_into(
    out: &mut [C64],
    y: &[C64],
    taps: &[f64],
    i: i64,
    n_subbands: usize,
    downsample: usize,
    delay: usize,
) {
    let rot = modulation_table(i, n_subbands, 1.0);
    let shift = delay % n_subbands;
    let mut acc = vec![C64::new(0.0, 0.0); out.len()];
    for (m, v) in y.iter().enumerate() {
        let base = m * downsample;
        for (j, s) in taps.iter().enumerate() {
            let k = base + j;
            if k >= out.len() {
                break;
            }
            acc[k] += v * *s;
        }
    }
    for (k, (o, a)) in out.iter_mut().zip(acc).enumerate() {
        *o += a * rot[(k + n_subbands - shift) % n_subbands];
    }
}

/// Active subbands at rate `1/(K T)` with delay bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    bands: Vec<Vec<C64>>,
    half_width: usize,
    t0_offset: usize,
    input_offset: usize,
    rate: f64,
}

impl SubbandSet {
    pub fn new(bands: Vec<Vec<C64>>, rate: f64) -> Result<Self> {
        if bands.len() % 2 == 0 {
            return Err(Error::invalid("subband count must be odd (indices symmetric about 0)"));
        }
        let len = bands[0].len();
        if let Some(b) = bands.iter().find(|b| b.len() != len) {
            return Err(Error::LengthMismatch { expected: len, actual: b.len() });
        }
        let half_width = bands.len() / 2;
        Ok(SubbandSet { bands, half_width, t0_offset: 0, input_offset: 0, rate })
    }

    pub(crate) fn from_parts(bands: Vec<Vec<C64>>, rate: f64, t0_offset: usize, input_offset: usize) -> Self {
        let half_width = bands.len() / 2;
        SubbandSet { bands, half_width, t0_offset, input_offset, rate }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn band(&self, i: i64) -> &[C64] {
        &self.bands[(i + self.half_width as i64) as usize]
    }

    pub fn bands(&self) -> &[Vec<C64>] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<Vec<C64>> {
        self.bands
    }

    /// Samples per subband.
    pub fn len(&self) -> usize {
        self.bands[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Common delay in subband samples accumulated after analysis.
    pub fn t0_offset(&self) -> usize {
        self.t0_offset
    }

    /// `t0_offset` of the signal that was analyzed (base-rate samples).
    pub fn input_offset(&self) -> usize {
        self.input_offset
    }
}

fn check_rate(signal_rate: f64, expected: f64) -> Result<()> {
    if ((signal_rate - expected) / expected).abs() > 1e-9 {
        return Err(Error::inconsistent(format!(
            "signal sampled at {signal_rate} Hz but the bank expects {expected} Hz"
        )));
    }
    Ok(())
}

pub fn analyze(u: &ComplexSignal, spec: &FilterBankSpec) -> Result<SubbandSet> {
    check_rate(u.sample_rate(), spec.base_rate)?;
    if u.is_empty() {
        return Err(Error::invalid("cannot analyze an empty signal"));
    }
    let bands = spec
        .indices()
        .map(|i| analyze_band(u.samples(), &spec.analysis_taps, i, spec.n_subbands, spec.downsample))
        .collect();
    Ok(SubbandSet::from_parts(
        bands,
        spec.subband_rate(),
        0,
        u.t0_offset(),
    ))
}

/// Recombine the subbands; the output `t0_offset` is the total delay from the
/// original input so `matched_filter_downsample` can be aligned directly.
pub fn synthesize(subbands: &SubbandSet, spec: &FilterBankSpec) -> Result<ComplexSignal> {
    if subbands.half_width != spec.half_width {
        return Err(Error::inconsistent(format!(
            "{} subbands given, bank has {} active",
            subbands.bands.len(),
            spec.n_active()
        )));
    }
    let mut out = vec![C64::new(0.0, 0.0); subbands.len() * spec.downsample];
    let inner = spec.round_trip_delay(subbands.t0_offset);
    for (y, i) in subbands.bands.iter().zip(spec.indices()) {
        synthesize_band_into(&mut out, y, &spec.synthesis_taps, i, spec.n_subbands, spec.downsample, inner);
    }
    let delay = subbands.input_offset + inner;
    ComplexSignal::with_offset(out, spec.base_rate, delay)
}

/// Energy captured by every one of the `N` subbands of a bank built from
/// `taps`, as `(index, energy)` for indices `-(N-1)/2 ..= N/2`.
pub fn subband_energies(u: &ComplexSignal, n_subbands: usize, downsample: usize, taps: &[f64]) -> Vec<(i64, f64)> {
    let n = n_subbands as i64;
    (-(n - 1) / 2..=n / 2)
        .map(|i| {
            let y = analyze_band(u.samples(), taps, i, n_subbands, downsample);
            (i, y.iter().map(|v| v.norm_sqr()).sum())
        })
        .collect()
}
