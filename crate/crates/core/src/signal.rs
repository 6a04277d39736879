//! Complex baseband signals, symbol sources, pulse shaping and SNR metrics.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result, C64};

/// Ceiling reported by [`align_and_snr`] when the residual error vanishes.
pub const SNR_CEILING_DB: f64 = 100.0;

/// Uniformly sampled complex baseband waveform. Amplitudes are in sqrt(W).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<C64>,
    sample_rate: f64,
    t0_offset: usize,
}

impl ComplexSignal {
    pub fn new(samples: Vec<C64>, sample_rate: f64) -> Result<Self> {
        Self::with_offset(samples, sample_rate, 0)
    }

    pub fn with_offset(samples: Vec<C64>, sample_rate: f64, t0_offset: usize) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(k) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::invalid(format!("non-finite sample at index {k}")));
        }
        Ok(ComplexSignal { samples, sample_rate, t0_offset })
    }

    /// Internal constructor for values produced by finite arithmetic on a
    /// validated signal.
    pub(crate) fn from_parts(samples: Vec<C64>, sample_rate: f64, t0_offset: usize) -> Self {
        debug_assert!(samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()));
        ComplexSignal { samples, sample_rate, t0_offset }
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Accumulated pipeline delay in samples at this signal's rate.
    pub fn t0_offset(&self) -> usize {
        self.t0_offset
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub(crate) fn map_samples(self, f: impl FnOnce(Vec<C64>) -> Vec<C64>) -> Self {
        let ComplexSignal { samples, sample_rate, t0_offset } = self;
        ComplexSignal::from_parts(f(samples), sample_rate, t0_offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    pub symbols: Vec<C64>,
    pub baud: f64,
    pub seed: u64,
}

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    /// Circularly-symmetric complex Gaussian, unit variance.
    Gaussian,
    /// Square M-QAM normalised to unit average energy.
    Qam(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub baud: f64,
    pub oversampling: usize,
    pub rolloff: f64,
    pub power_dbm: f64,
    pub n_symbols: usize,
    pub seed: u64,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.baud > 0.0) {
            return Err(Error::invalid("baud must be positive"));
        }
        if self.oversampling < 2 {
            return Err(Error::invalid("oversampling must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::invalid("rolloff must lie in [0, 1]"));
        }
        if self.n_symbols == 0 {
            return Err(Error::invalid("n_symbols must be positive"));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.baud * self.oversampling as f64
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Circularly-symmetric complex Gaussian symbols with unit average energy.
pub fn generate_symbols(spec: &SignalSpec) -> Result<SymbolSequence> {
    generate_symbols_with(spec, Constellation::Gaussian)
}

pub fn generate_symbols_with(spec: &SignalSpec, constellation: Constellation) -> Result<SymbolSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let symbols = match constellation {
        Constellation::Gaussian => (0..spec.n_symbols)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re, im) * FRAC_1_SQRT_2
            })
            .collect(),
        Constellation::Qam(order) => {
            let side = (order as f64).sqrt().round() as usize;
            if side < 2 || side * side != order {
                return Err(Error::invalid(format!("{order}-QAM is not a square constellation")));
            }
            // average energy of the odd-integer grid is 2 (side^2 - 1) / 3
            let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
            let level = |k: usize| (2.0 * k as f64 - (side as f64 - 1.0)) / norm;
            (0..spec.n_symbols)
                .map(|_| C64::new(level(rng.random_range(0..side)), level(rng.random_range(0..side))))
                .collect()
        }
    };
    Ok(SymbolSequence { symbols, baud: spec.baud, seed: spec.seed })
}

/// Unit-energy root-raised-cosine taps spanning `span_symbols` symbols.
///
/// The closed form is singular at t = 0 and t = +-T/(4 rolloff); those taps
/// use the analytic limits.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, oversampling: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::invalid(format!("rolloff {rolloff} outside [0, 1]")));
    }
    if span_symbols < 2 || oversampling == 0 {
        return Err(Error::invalid("span_symbols must be at least 2"));
    }
    let len = span_symbols * oversampling + 1;
    if len % 2 == 0 {
        return Err(Error::invalid("span_symbols * oversampling must be even (odd tap count)"));
    }
    let mut taps = rrc_impulse(rolloff, oversampling as f64, len);
    let norm = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Unnormalised centred root-raised-cosine impulse response with symbol
/// period `period` samples.
pub(crate) fn rrc_impulse(rolloff: f64, period: f64, len: usize) -> Vec<f64> {
    let centre = (len as f64 - 1.0) / 2.0;
    (0..len)
        .map(|k| {
            let t = (k as f64 - centre) / period;
            if t.abs() < 1e-12 {
                1.0 - rolloff + 4.0 * rolloff / PI
            } else if rolloff > 0.0 && ((4.0 * rolloff * t).abs() - 1.0).abs() < 1e-9 {
                let a = PI / (4.0 * rolloff);
                rolloff / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - rolloff)).sin() + 4.0 * rolloff * t * (PI * t * (1.0 + rolloff)).cos();
                num / (PI * t * (1.0 - (4.0 * rolloff * t).powi(2)))
            }
        })
        .collect()
}

/// Upsample by `oversampling` and filter with `taps` (circularly, so the
/// waveform of a periodic symbol block is itself periodic). Symbol `m` is
/// centred on sample `m * oversampling`.
pub fn pulse_shape(symbols: &SymbolSequence, taps: &[f64], oversampling: usize, power_dbm: f64) -> Result<ComplexSignal> {
    if symbols.is_empty() {
        return Err(Error::invalid("empty symbol sequence"));
    }
    let n = symbols.len() * oversampling;
    let centre = (taps.len() - 1) / 2;
    let tap_energy: f64 = taps.iter().map(|h| h * h).sum();
    // unit-energy symbols through the pulse give mean power tap_energy / oversampling
    let scale = (dbm_to_watts(power_dbm) * oversampling as f64 / tap_energy).sqrt();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (m, s) in symbols.symbols.iter().enumerate() {
        let s = s * scale;
        let base = (m * oversampling) as isize - centre as isize;
        for (j, h) in taps.iter().enumerate() {
            let idx = (base + j as isize).rem_euclid(n as isize) as usize;
            out[idx] += s * h;
        }
    }
    ComplexSignal::new(out, symbols.baud * oversampling as f64)
}

/// Matched filter followed by symbol-rate sampling at
/// `delay_samples + m * oversampling`.
pub fn matched_filter_downsample(
    signal: &ComplexSignal,
    taps: &[f64],
    oversampling: usize,
    delay_samples: usize,
) -> Result<SymbolSequence> {
    if delay_samples >= signal.len() {
        return Err(Error::invalid(format!(
            "delay {delay_samples} out of range for a {}-sample signal",
            signal.len()
        )));
    }
    let count = (signal.len() - delay_samples - 1) / oversampling + 1;
    let symbols = matched_filter_at(signal.samples(), taps, delay_samples, oversampling, count);
    Ok(SymbolSequence {
        symbols,
        baud: signal.sample_rate() / oversampling as f64,
        seed: 0,
    })
}

/// Matched-filter outputs at `start + m * step` for `m < count`, zero padding
/// outside `x`.
pub(crate) fn matched_filter_at(x: &[C64], taps: &[f64], start: usize, step: usize, count: usize) -> Vec<C64> {
    let centre = (taps.len() - 1) / 2;
    let n = x.len() as isize;
    (0..count)
        .map(|m| {
            let k = (start + m * step) as isize;
            let mut acc = C64::new(0.0, 0.0);
            for (j, h) in taps.iter().enumerate() {
                let idx = k + centre as isize - j as isize;
                if idx >= 0 && idx < n {
                    acc += x[idx as usize] * h;
                }
            }
            acc
        })
        .collect()
}

/// Least-squares complex gain mapping `rx` onto `tx`.
pub fn alignment_gain(tx: &[C64], rx: &[C64]) -> Option<C64> {
    let rr: f64 = rx.iter().map(|r| r.norm_sqr()).sum();
    if rr == 0.0 {
        return None;
    }
    let rt: C64 = rx.iter().zip(tx).map(|(r, t)| r.conj() * t).sum();
    Some(rt / rr)
}

/// SNR in dB between equal-length slices after removing one common complex
/// gain. The gain is the least-squares fit of `rx` by `c tx`, inverted, so
/// additive noise of variance `s2` on unit-power symbols reads `1/s2`.
pub fn aligned_snr_db(tx: &[C64], rx: &[C64]) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(Error::LengthMismatch { expected: tx.len(), actual: rx.len() });
    }
    if tx.is_empty() {
        return Err(Error::invalid("no symbols to compare"));
    }
    if rx.iter().all(|r| r.norm_sqr() == 0.0) {
        return Err(Error::ZeroSignal);
    }
    let c = alignment_gain(rx, tx).ok_or_else(|| Error::invalid("reference symbols are all zero"))?;
    if c.norm_sqr() == 0.0 {
        return Ok(-SNR_CEILING_DB);
    }
    let a = c.inv();
    let sig: f64 = tx.iter().map(|t| t.norm_sqr()).sum();
    let err: f64 = rx.iter().zip(tx).map(|(r, t)| (a * r - t).norm_sqr()).sum();
    if err <= sig * 10f64.powf(-SNR_CEILING_DB / 10.0) {
        return Ok(SNR_CEILING_DB);
    }
    Ok(10.0 * (sig / err).log10())
}

/// SNR after discarding `guard` symbols at each end of both sequences.
pub fn align_and_snr(tx: &SymbolSequence, rx: &SymbolSequence, guard: usize) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(Error::LengthMismatch { expected: tx.len(), actual: rx.len() });
    }
    if 2 * guard >= tx.len() {
        return Err(Error::invalid(format!("guard {guard} leaves no symbols out of {}", tx.len())));
    }
    let range = guard..tx.len() - guard;
    aligned_snr_db(&tx.symbols[range.clone()], &rx.symbols[range])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize, seed: u64) -> SignalSpec {
        SignalSpec { baud: 32e9, oversampling: 2, rolloff: 0.1, power_dbm: 0.0, n_symbols: n, seed }
    }

    #[test]
    fn symbols_are_deterministic() {
        let a = generate_symbols(&spec(1000, 7)).unwrap();
        let b = generate_symbols(&spec(1000, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_symbols(&spec(1000, 8)).unwrap();
        assert_ne!(a.symbols, c.symbols);
    }

    #[test]
    fn gaussian_symbols_have_unit_energy() {
        let s = generate_symbols(&spec(1_000_000, 1)).unwrap();
        let e = s.symbols.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((0.995..=1.005).contains(&e), "mean energy {e}");
    }

    #[test]
    fn empty_symbol_request_is_rejected() {
        assert!(generate_symbols(&spec(0, 1)).is_err());
    }

    #[test]
    fn qam_grid_has_unit_energy() {
        let s = generate_symbols_with(&spec(200_000, 3), Constellation::Qam(16)).unwrap();
        let e = s.symbols.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((e - 1.0).abs() < 0.01);
        assert!(generate_symbols_with(&spec(10, 3), Constellation::Qam(8)).is_err());
    }

    #[test]
    fn rrc_is_symmetric_and_unit_energy() {
        let h = rrc_taps(0.1, 64, 4).unwrap();
        assert_eq!(h.len(), 257);
        for k in 0..h.len() {
            assert_eq!(h[k], h[h.len() - 1 - k]);
        }
        let e: f64 = h.iter().map(|x| x * x).sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rrc_singular_points_are_finite() {
        // rolloff 0.25 at 4 samples/symbol hits t = T/(4 rolloff) exactly
        let h = rrc_taps(0.25, 16, 4).unwrap();
        assert!(h.iter().all(|x| x.is_finite()));
        let neighbours = rrc_impulse(0.25, 4.0, 65);
        let at = 32 + 4;
        let mid = neighbours[at];
        let perturbed = rrc_impulse(0.25, 4.0 + 1e-6, 65)[at];
        assert!((mid - perturbed).abs() < 1e-5);
    }

    #[test]
    fn rrc_rejects_bad_rolloff() {
        assert!(rrc_taps(1.5, 16, 4).is_err());
        assert!(rrc_taps(-0.1, 16, 4).is_err());
        assert!(rrc_taps(0.1, 5, 3).is_err());
    }

    #[test]
    fn raised_cosine_is_nyquist() {
        let os = 4;
        let h = rrc_taps(0.1, 64, os).unwrap();
        // full linear self-convolution
        let mut c = vec![0.0; 2 * h.len() - 1];
        for (i, a) in h.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        let mid = h.len() - 1;
        let peak = c[mid];
        let mut k = os;
        while mid + k < c.len() {
            assert!(c[mid + k].abs() < 1e-3 * peak, "isi {} at {k}", c[mid + k] / peak);
            assert!(c[mid - k].abs() < 1e-3 * peak);
            k += os;
        }
    }

    #[test]
    fn single_symbol_gives_impulse_response() {
        let taps = rrc_taps(0.1, 8, 2).unwrap();
        let mut s = vec![C64::new(0.0, 0.0); 32];
        s[10] = C64::new(1.0, 0.0);
        let seq = SymbolSequence { symbols: s, baud: 1.0, seed: 0 };
        let u = pulse_shape(&seq, &taps, 2, 0.0).unwrap();
        let scale = (1e-3 * 2.0f64).sqrt();
        let centre = (taps.len() - 1) / 2;
        for (j, h) in taps.iter().enumerate() {
            let idx = 20 + j - centre;
            assert!((u.samples()[idx].re - scale * h).abs() < 1e-15);
        }
    }

    #[test]
    fn launch_power_matches_dbm() {
        let taps = rrc_taps(0.1, 32, 2).unwrap();
        for p in [0.0, 3.0] {
            let s = generate_symbols(&SignalSpec { n_symbols: 100_000, power_dbm: p, ..spec(1, 5) }).unwrap();
            let u = pulse_shape(&s, &taps, 2, p).unwrap();
            let measured = 10.0 * (u.mean_power() / 1e-3).log10();
            assert!((measured - p).abs() < 0.05, "{measured} vs {p}");
        }
    }

    #[test]
    fn shaped_spectrum_is_band_limited() {
        let os = 4;
        let taps = rrc_taps(0.1, 64, os).unwrap();
        let s = generate_symbols(&spec(100_000, 11)).unwrap();
        let u = pulse_shape(&s, &taps, os, 0.0).unwrap();
        // averaged Hann-windowed periodogram over 1024-sample segments
        let seg = 1024;
        let fft = crate::fft::FftPair::new(seg);
        let hann: Vec<f64> =
            (0..seg).map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / seg as f64).cos()).collect();
        let mut psd = vec![0.0; seg];
        for chunk in u.samples().chunks_exact(seg) {
            let mut buf: Vec<C64> = chunk.iter().zip(&hann).map(|(x, w)| x * w).collect();
            fft.forward(&mut buf);
            for (p, v) in psd.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
        let edge = 1.1 / 2.0 / os as f64; // normalised to the sample rate
        let (mut inband, mut peak_out) = (0.0f64, 0.0f64);
        for (k, p) in psd.iter().enumerate() {
            let f = if k < seg / 2 { k as f64 } else { k as f64 - seg as f64 } / seg as f64;
            if f.abs() <= edge {
                inband = inband.max(*p);
            } else if f.abs() > edge + 0.01 {
                peak_out = peak_out.max(*p);
            }
        }
        assert!(10.0 * (peak_out / inband).log10() < -40.0);
    }

    #[test]
    fn loopback_recovers_symbols() {
        let os = 2;
        let taps = rrc_taps(0.1, 32, os).unwrap();
        let s = generate_symbols(&spec(10_000, 2)).unwrap();
        let u = pulse_shape(&s, &taps, os, 0.0).unwrap();
        let r = matched_filter_downsample(&u, &taps, os, 0).unwrap();
        assert_eq!(r.len(), s.len());
        let snr = align_and_snr(&s, &r, 64).unwrap();
        assert!(snr >= 40.0, "loopback snr {snr}");
    }

    #[test]
    fn zero_signal_gives_zero_symbols() {
        let taps = rrc_taps(0.1, 16, 2).unwrap();
        let u = ComplexSignal::new(vec![C64::new(0.0, 0.0); 200], 2.0).unwrap();
        let r = matched_filter_downsample(&u, &taps, 2, 0).unwrap();
        assert!(r.symbols.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn misalignment_destroys_correlation() {
        let os = 2;
        let taps = rrc_taps(0.1, 32, os).unwrap();
        let s = generate_symbols(&spec(10_000, 4)).unwrap();
        let u = pulse_shape(&s, &taps, os, 0.0).unwrap();
        let r = matched_filter_downsample(&u, &taps, os, os).unwrap();
        let n = r.len();
        let rt: C64 = r.symbols.iter().zip(&s.symbols[..n]).map(|(a, b)| a.conj() * b).sum();
        let norm = (r.symbols.iter().map(|a| a.norm_sqr()).sum::<f64>()
            * s.symbols[..n].iter().map(|a| a.norm_sqr()).sum::<f64>())
        .sqrt();
        assert!(rt.norm() / norm < 0.2);
    }

    #[test]
    fn delay_out_of_range_is_an_error() {
        let u = ComplexSignal::new(vec![C64::new(1.0, 0.0); 10], 2.0).unwrap();
        assert!(matched_filter_downsample(&u, &[1.0], 2, 10).is_err());
    }

    #[test]
    fn identity_hits_ceiling() {
        let s = generate_symbols(&spec(1000, 9)).unwrap();
        assert!(align_and_snr(&s, &s, 10).unwrap() >= 60.0);
        let rot = SymbolSequence {
            symbols: s.symbols.iter().map(|x| x * C64::from_polar(1.0, 1.234)).collect(),
            ..s.clone()
        };
        assert!(align_and_snr(&s, &rot, 10).unwrap() >= 60.0);
    }

    #[test]
    fn awgn_snr_estimate() {
        let s = generate_symbols(&spec(100_000, 21)).unwrap();
        let noise = generate_symbols(&spec(100_000, 22)).unwrap();
        let rx = SymbolSequence {
            symbols: s.symbols.iter().zip(&noise.symbols).map(|(a, n)| a + n * 0.1f64.sqrt()).collect(),
            ..s.clone()
        };
        let snr = align_and_snr(&s, &rx, 0).unwrap();
        assert!((snr - 10.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn snr_errors() {
        let s = generate_symbols(&spec(100, 1)).unwrap();
        let short = SymbolSequence { symbols: s.symbols[..50].to_vec(), ..s.clone() };
        assert!(matches!(align_and_snr(&s, &short, 0), Err(Error::LengthMismatch { .. })));
        let zero = SymbolSequence { symbols: vec![C64::new(0.0, 0.0); 100], ..s.clone() };
        assert!(matches!(align_and_snr(&s, &zero, 0), Err(Error::ZeroSignal)));
    }

    #[test]
    fn signal_rejects_non_finite() {
        assert!(ComplexSignal::new(vec![C64::new(f64::NAN, 0.0)], 1.0).is_err());
        assert!(ComplexSignal::new(vec![C64::new(0.0, 0.0)], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn alignment_is_gain_and_phase_invariant(c in 0.01f64..100.0, theta in -3.2f64..3.2, seed in 0u64..1000) {
            let s = generate_symbols(&spec(256, seed)).unwrap();
            let n = generate_symbols(&spec(256, seed + 10_000)).unwrap();
            let rx: Vec<C64> = s.symbols.iter().zip(&n.symbols).map(|(a, b)| a + b * 0.3).collect();
            let base = aligned_snr_db(&s.symbols, &rx).unwrap();
            let g = C64::from_polar(c, theta);
            let scaled: Vec<C64> = rx.iter().map(|r| r * g).collect();
            let moved = aligned_snr_db(&s.symbols, &scaled).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }
    }
}
