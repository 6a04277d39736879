use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_dbp::channel::{effective_length, log_step_grid, ssfm_propagate, FiberParams};
use subband_dbp::engine::{
    dbp_process, process_signal, CdFilter, DbpParams, EngineLayout, EngineSpec, MimoFilterFactors, StepPlan, FRAC_TAPS,
};
use subband_dbp::fft::resample_periodic;
use subband_dbp::filterbank::{FilterBankSpec, SubbandSet};
use subband_dbp::signal::{
    align_and_snr, aligned_snr_db, generate_symbols, matched_filter_downsample, pulse_shape, rrc_taps, ComplexSignal,
    SignalSpec, SymbolSequence,
};
use subband_dbp::train::refine_linear;
use subband_dbp::C64;

const BAUD: f64 = 32e9;

fn desk_link(gamma: f64) -> FiberParams {
    FiberParams { gamma_per_w_km: gamma, n_spans: 4, ..FiberParams::default() }
}

/// Noiseless forward simulation at 4 samples/symbol, returned at 2.
fn simulate(fiber: &FiberParams, n_symbols: usize, power_dbm: f64, seed: u64) -> (SymbolSequence, ComplexSignal) {
    let spec = SignalSpec { baud: BAUD, oversampling: 4, rolloff: 0.1, power_dbm, n_symbols, seed };
    let tx = generate_symbols(&spec).unwrap();
    let u = pulse_shape(&tx, &rrc_taps(0.1, 64, 4).unwrap(), 4, power_dbm).unwrap();
    let grid = log_step_grid(fiber.span_km, 50, fiber.alpha_db_per_km).unwrap();
    let rx = ssfm_propagate(&u, fiber, &grid, 4, None).unwrap();
    let rx2 = resample_periodic(rx.samples(), n_symbols * 2);
    (tx, ComplexSignal::new(rx2, 2.0 * BAUD).unwrap())
}

/// Process one period of a periodic record with circular extension and
/// return the matched-filtered symbols, sampled `shift` samples away from the
/// reported delay.
fn equalize_periodic(rx: &ComplexSignal, params: &DbpParams, pad: usize, shift: isize) -> SymbolSequence {
    let n = rx.len();
    let s = rx.samples();
    let ext: Vec<_> = (0..n + 2 * pad).map(|k| s[(k + n - pad) % n]).collect();
    let u = ComplexSignal::new(ext, rx.sample_rate()).unwrap();
    let out = process_signal(&u, params).unwrap();
    assert_eq!(out.t0_offset(), params.bank.round_trip_delay(params.layout.engine_delay()));
    let taps = rrc_taps(0.1, 64, 2).unwrap();
    let start = (pad + out.t0_offset()) as isize + shift;
    let y = matched_filter_downsample(&out, &taps, 2, start as usize).unwrap();
    SymbolSequence { symbols: y.symbols[..n / 2].to_vec(), ..y }
}

fn correlation(a: &[C64], b: &[C64]) -> f64 {
    let ab: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let aa: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let bb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    ab.norm() / (aa * bb).sqrt()
}

fn linear_params() -> DbpParams {
    let spec = EngineSpec { step_multiple: 2, cd_half_len: 3, ..EngineSpec::default() };
    let layout = EngineLayout::new(&spec, 2.0 * BAUD, &desk_link(0.0)).unwrap();
    refine_linear(&DbpParams::linear(layout).unwrap(), 4).unwrap()
}

fn rms_diff(a: &[C64], b: &[C64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64).sqrt()
}

/// Single-band engine: N = K = 1, no neighbours, a given number of steps.
fn scalar_layout(steps: Vec<(f64, usize)>, beta2: f64, cd_half_len: usize, factors: usize) -> EngineLayout {
    let spec = EngineSpec {
        n_subbands: 1,
        downsample: 1,
        half_width: 0,
        rolloff: 0.0,
        prototype_len: 1,
        step_multiple: 1,
        cd_half_len,
        mimo_factors: factors,
    };
    let plan = StepPlan { steps, residual_km: 0.0, delta_km: 1.0 };
    EngineLayout::with_plan(&spec, 2.0 * BAUD, beta2, plan).unwrap()
}

#[test]
fn zero_mimo_engine_compensates_linear_channel() {
    let params = linear_params();
    let (tx, rx) = simulate(&desk_link(0.0), 4096, 0.0, 1);
    let y = equalize_periodic(&rx, &params, 1024, 0);
    let snr = align_and_snr(&tx, &y, 64).unwrap();
    assert!(snr >= 30.0, "linear subband equalizer {snr} dB");
}

#[test]
fn reported_delay_is_exact() {
    let params = linear_params();
    let (tx, rx) = simulate(&desk_link(0.0), 2048, 0.0, 2);
    let aligned = equalize_periodic(&rx, &params, 1024, 0);
    let inner = 64..tx.len() - 64;
    let c0 = correlation(&tx.symbols[inner.clone()], &aligned.symbols[inner.clone()]);
    assert!(c0 > 0.99, "aligned correlation {c0}");
    // one symbol-rate sample early or late
    for shift in [-2, 2] {
        let y = equalize_periodic(&rx, &params, 1024, shift);
        let c = correlation(&tx.symbols[inner.clone()], &y.symbols[inner.clone()]);
        assert!(c < 0.5, "shift {shift}: correlation {c}");
    }
}

/// Direct single-band time-domain backpropagation: full convolution with the
/// CD taps, SPM rotation by `g |y|^2`, then the output FIR and phase.
fn scalar_dbp(x: &[C64], taps: &[Vec<C64>], gains: &[f64], out_taps: &[f64], phase: f64) -> Vec<C64> {
    let n = x.len();
    let mut u = x.to_vec();
    for (h, g) in taps.iter().zip(gains) {
        let y: Vec<C64> = (0..n)
            .map(|k| (0..h.len()).filter(|j| *j <= k).map(|j| h[j] * u[k - j]).sum())
            .collect();
        u = y.iter().map(|v| v * C64::from_polar(1.0, g * v.norm_sqr())).collect();
    }
    (0..n)
        .map(|k| {
            let acc: C64 = (0..out_taps.len()).filter(|j| *j <= k).map(|j| u[k - j] * out_taps[j]).sum();
            acc * C64::from_polar(1.0, phase)
        })
        .collect()
}

#[test]
fn single_subband_engine_is_scalar_backpropagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let layout = scalar_layout(vec![(20.0, 1); 4], -21.7, 3, 3);
    let bank = FilterBankSpec::passthrough(2.0 * BAUD).unwrap();
    let cd: Vec<CdFilter> = (0..4)
        .map(|_| {
            let half = (0..4).map(|_| C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
            CdFilter::from_half(half, 20.0).unwrap()
        })
        .collect();
    let mimo: Vec<MimoFilterFactors> =
        (0..4).map(|_| MimoFilterFactors::random(1, 3, 0, 1.0, &mut rng)).collect();
    let mut params = DbpParams::new(layout, bank, cd.clone(), mimo.clone()).unwrap();
    params.frac_delay = vec![(0..FRAC_TAPS).map(|_| rng.random_range(-0.5..0.5)).collect()];
    params.phase = vec![0.7];
    let x: Vec<C64> = (0..2048).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let set = SubbandSet::new(vec![x.clone()], 2.0 * BAUD).unwrap();
    let out = dbp_process(&set, &params, &params.layout.plan).unwrap();
    let taps: Vec<Vec<C64>> = cd.iter().map(CdFilter::taps).collect();
    let gains: Vec<f64> = mimo.iter().map(|g| (0..3).map(|f| g.get(f, 0, 0, 0)).product()).collect();
    let reference = scalar_dbp(&x, &taps, &gains, &params.frac_delay[0], 0.7);
    let err = rms_diff(out.band(0), &reference);
    assert!(err < 1e-8, "rms deviation {err}");
}

#[test]
fn analytic_spm_coefficient_inverts_dispersionless_link() {
    let fiber = FiberParams { beta2_ps2_per_km: 0.0, n_spans: 3, ..FiberParams::default() };
    let spec = SignalSpec { baud: BAUD, oversampling: 2, rolloff: 0.1, power_dbm: 6.0, n_symbols: 2048, seed: 5 };
    let tx = generate_symbols(&spec).unwrap();
    let u = pulse_shape(&tx, &rrc_taps(0.1, 64, 2).unwrap(), 2, 6.0).unwrap();
    let grid = log_step_grid(fiber.span_km, 20, fiber.alpha_db_per_km).unwrap();
    let rx = ssfm_propagate(&u, &fiber, &grid, 2, None).unwrap();

    let layout = scalar_layout(vec![(fiber.span_km, 1); 3], 0.0, 1, 1);
    let bank = FilterBankSpec::passthrough(2.0 * BAUD).unwrap();
    let l_eff = effective_length(fiber.alpha_per_km(), fiber.span_km);
    let mimo = (0..3)
        .map(|_| {
            let mut g = MimoFilterFactors::zeros(1, 1, 0);
            g.set(0, 0, 0, 0, -fiber.gamma_per_w_km * l_eff);
            g
        })
        .collect();
    let params = DbpParams::new(layout, bank, vec![CdFilter::identity(1); 3], mimo).unwrap();
    let out = process_signal(&rx, &params).unwrap();
    let d = out.t0_offset();
    let n = u.len();
    let snr = aligned_snr_db(&u.samples()[..n - d], &out.samples()[d..]).unwrap();
    let uncompensated = aligned_snr_db(u.samples(), rx.samples()).unwrap();
    assert!(snr >= 50.0, "SPM inverse {snr} dB");
    assert!(uncompensated < 30.0, "link too linear for the check: {uncompensated} dB");
}
