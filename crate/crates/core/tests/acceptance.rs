//! Acceptance suite: one pass/fail line per criterion.
//!
//! Criteria 6 and 7 run the desk-scale experiment; the simulated dataset and
//! the trained checkpoint are cached under the cargo target directory, keyed
//! by their configuration digests.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_dbp::channel::{
    cd_exact, effective_length, full_dbp_baseline, kerr_rotate, log_step_grid, ssfm_propagate, CdSign, FiberParams,
};
use subband_dbp::engine::{
    apply_cd, compute_delta, dbp_process, fd_subband_dbp_baseline, mimo_capacity, mimo_intensity_filter, plan_steps,
    CdFilter, DbpParams, EngineLayout, EngineSpec, MimoFilterFactors, StepPlan, FRAC_TAPS,
};
use subband_dbp::experiment::{
    evaluate, fd_baseline_rms, generate_dataset, load_checkpoint, load_dataset, rm_report_for_counts,
    save_checkpoint, save_dataset, selftest, train_all, Checkpoint, DataBundle, ExperimentConfig, Method, ResultRow,
};
use subband_dbp::filterbank::{design_prototype, subband_energies, FilterBankSpec, SubbandSet};
use subband_dbp::signal::{generate_symbols, pulse_shape, rrc_taps, ComplexSignal, SignalSpec};
use subband_dbp::{Result, C64};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(checks: &[(bool, String)]) -> Outcome {
    Outcome {
        passed: checks.iter().all(|(ok, _)| *ok),
        detail: checks
            .iter()
            .map(|(ok, d)| if *ok { d.clone() } else { format!("[FAILED] {d}") })
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn rms_diff(a: &[C64], b: &[C64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64).sqrt()
}

fn rrc_signal(baud: f64, sps: usize, power_dbm: f64, n: usize, seed: u64) -> Result<ComplexSignal> {
    let spec = SignalSpec { baud, oversampling: sps, rolloff: 0.1, power_dbm, n_symbols: n, seed };
    pulse_shape(&generate_symbols(&spec)?, &rrc_taps(0.1, 64, sps)?, sps, power_dbm)
}

fn formulas() -> Result<Outcome> {
    let (delta, _) = compute_delta(12, 8, 192e9, -21.7)?;
    let plan = plan_steps(2500.0, delta, 2)?;
    let uniform: usize = plan.steps.iter().filter(|(xi, _)| *xi > 0.0).count();
    let step = plan.steps[0].0;
    let m = plan.n_steps();
    let capacity = mimo_capacity(7, 12, 3, m);
    let layout = EngineLayout::with_plan(&EngineSpec::default(), 192e9, -21.7, plan.clone())?;
    let rm = rm_report_for_counts(&layout, &[3812])?;
    let fd128 = fd_baseline_rms(128, 13)?;
    let best = (4..=12)
        .map(|k| 1usize << k)
        .min_by(|a, b| fd_baseline_rms(*a, 13).unwrap().total_cmp(&fd_baseline_rms(*b, 13).unwrap()))
        .unwrap();
    Ok(outcome(&[
        ((delta - 19.1).abs() <= 0.05, format!("delta {delta:.3} km")),
        (
            uniform == 65 && (step - 38.2).abs() < 0.05 && (plan.residual_km - 17.0).abs() < 0.05 && m == 66,
            format!("plan {uniform} x {step:.2} km + {:.2} km, M = {m}", plan.residual_km),
        ),
        (capacity == 48510 && layout.factor_order * 3 == 12, format!("capacity {capacity}")),
        (
            rm.cd_rm_per_subband_step == 16.0 && rm.mimo_rm_per_subband_step.round() == 8.0,
            format!("RM {} + {:.2}", rm.cd_rm_per_subband_step, rm.mimo_rm_per_subband_step),
        ),
        ((fd128 - 98.0).abs() <= 1.0 && best == 128, format!("FD {fd128:.1} RMs at n=128, optimum n={best}")),
    ]))
}

fn channel_physics() -> Result<Outcome> {
    let rate = 384e9;
    let n = 8192;
    let centroid = |f_hz: f64| -> Result<f64> {
        let s: Vec<C64> = (0..n)
            .map(|k| {
                let t = k as f64 - n as f64 / 2.0;
                C64::from_polar((-(t / 60.0).powi(2)).exp(), 2.0 * std::f64::consts::PI * f_hz * k as f64 / rate)
            })
            .collect();
        let v = cd_exact(&ComplexSignal::new(s, rate)?, 100.0, -21.7, CdSign::Forward)?;
        let (num, den) = v
            .samples()
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(a, b), (k, x)| (a + k as f64 * x.norm_sqr(), b + x.norm_sqr()));
        Ok(num / den / rate)
    };
    let spread = (centroid(48e9)? - centroid(-48e9)?).abs() * 96e9;

    let u = rrc_signal(32e9, 4, 0.0, 1024, 8)?;
    let linear = FiberParams { gamma_per_w_km: 0.0, n_spans: 3, ..FiberParams::default() };
    let out = ssfm_propagate(&u, &linear, &log_step_grid(100.0, 40, 0.2)?, 4, None)?;
    let exact = cd_exact(&u, 300.0, -21.7, CdSign::Forward)?;
    let lin_err = rms_diff(out.samples(), exact.samples());

    let u = rrc_signal(32e9, 4, 6.0, 512, 9)?;
    let spm = FiberParams { beta2_ps2_per_km: 0.0, n_spans: 1, ..FiberParams::default() };
    let out = ssfm_propagate(&u, &spm, &log_step_grid(100.0, 25, 0.2)?, 4, None)?;
    let exact = kerr_rotate(&u, spm.gamma_per_w_km, effective_length(spm.alpha_per_km(), 100.0));
    let spm_err = rms_diff(out.samples(), exact.samples());

    let u = rrc_signal(32e9, 4, 0.0, 2048, 3)?;
    let fwd = cd_exact(&u, 500.0, -21.7, CdSign::Forward)?;
    let rot = kerr_rotate(&u, 1.3, 21.0);
    let energy = ((fwd.energy() - u.energy()) / u.energy()).abs().max(((rot.energy() - u.energy()) / u.energy()).abs());
    Ok(outcome(&[
        ((spread - 125.0).abs() <= 2.0, format!("delay spread {spread:.1} symbols")),
        (lin_err < 1e-8, format!("linear limit rms {lin_err:.1e}")),
        (spm_err < 1e-8, format!("SPM limit rms {spm_err:.1e}")),
        (energy < 1e-12, format!("all-pass energy error {energy:.1e}")),
    ]))
}

fn filter_bank(desk: &ExperimentConfig) -> Result<Outcome> {
    let checks = selftest(desk)?;
    let recon = &checks[0];
    let u = rrc_signal(96e9, 2, 0.0, 16384, 11)?;
    let taps = design_prototype(12, 8, 0.45, 129)?;
    let e = subband_energies(&u, 12, 8, &taps);
    let total: f64 = e.iter().map(|(_, v)| v).sum();
    let central: f64 = e.iter().filter(|(i, _)| i.abs() <= 3).map(|(_, v)| v).sum();
    let capture = central / total;
    Ok(outcome(&[
        (recon.passed, format!("reconstruction {}", recon.detail)),
        (capture >= 0.99, format!("central 7 of 12 subbands capture {:.3}%", 100.0 * capture)),
    ]))
}

fn gradients(desk: &ExperimentConfig) -> Result<Outcome> {
    let checks = selftest(desk)?;
    Ok(outcome(&[(checks[1].passed, checks[1].detail.clone())]))
}

fn direct_conv(x: &[C64], taps: &[C64]) -> Vec<C64> {
    (0..x.len()).map(|k| (0..taps.len()).filter(|j| *j <= k).map(|j| taps[j] * x[k - j]).sum()).collect()
}

fn scalar_dbp(x: &[C64], taps: &[Vec<C64>], gains: &[f64], out_taps: &[f64], phase: f64) -> Vec<C64> {
    let mut u = x.to_vec();
    for (h, g) in taps.iter().zip(gains) {
        u = direct_conv(&u, h).iter().map(|v| v * C64::from_polar(1.0, g * v.norm_sqr())).collect();
    }
    let out: Vec<C64> = direct_conv(&u, &out_taps.iter().map(|t| C64::new(*t, 0.0)).collect::<Vec<_>>());
    out.into_iter().map(|v| v * C64::from_polar(1.0, phase)).collect()
}

fn oracles() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cplx = |n: usize, a: f64| -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-a..a), rng.random_range(-a..a))).collect()
    };
    let x = cplx(4096, 1.0);
    let f = CdFilter::from_half(cplx(4, 1.0), 1.0)?;
    let folded = rms_diff(&apply_cd(&x, &f), &direct_conv(&x, &f.taps()));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = MimoFilterFactors::random(7, 3, 4, 0.5, &mut rng);
    let a: Vec<Vec<f64>> = (0..7).map(|_| (0..300).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let cascade = mimo_intensity_filter(&g, &a)?;
    let dense = g.compose();
    let mut sq = 0.0;
    for i in 0..7 {
        for k in 0..300 {
            let v: f64 = (0..7)
                .map(|j| dense[i][j].iter().enumerate().filter(|(d, _)| *d <= k).map(|(d, c)| c * a[j][k - d]).sum::<f64>())
                .sum();
            sq += (v - cascade[i][k]).powi(2);
        }
    }
    let mimo = (sq / 2100.0).sqrt();

    let baud = 32e9;
    let spec = EngineSpec {
        n_subbands: 1,
        downsample: 1,
        half_width: 0,
        rolloff: 0.0,
        prototype_len: 1,
        step_multiple: 1,
        cd_half_len: 3,
        mimo_factors: 3,
    };
    let plan = StepPlan { steps: vec![(20.0, 1); 4], residual_km: 0.0, delta_km: 1.0 };
    let layout = EngineLayout::with_plan(&spec, 2.0 * baud, -21.7, plan)?;
    let bank = FilterBankSpec::passthrough(2.0 * baud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cd: Vec<CdFilter> = (0..4)
        .map(|_| {
            let half = (0..4).map(|_| C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
            CdFilter::from_half(half, 20.0)
        })
        .collect::<Result<_>>()?;
    let mimo_f: Vec<MimoFilterFactors> = (0..4).map(|_| MimoFilterFactors::random(1, 3, 0, 1.0, &mut rng)).collect();
    let mut params = DbpParams::new(layout, bank, cd.clone(), mimo_f.clone())?;
    params.frac_delay = vec![(0..FRAC_TAPS).map(|_| rng.random_range(-0.5..0.5)).collect()];
    params.phase = vec![0.7];
    let x: Vec<C64> = (0..2048).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let out = dbp_process(&SubbandSet::new(vec![x.clone()], 2.0 * baud)?, &params, &params.layout.plan)?;
    let taps: Vec<Vec<C64>> = cd.iter().map(CdFilter::taps).collect();
    let gains: Vec<f64> = mimo_f.iter().map(|g| (0..3).map(|f| g.get(f, 0, 0, 0)).product()).collect();
    let scalar = rms_diff(out.band(0), &scalar_dbp(&x, &taps, &gains, &params.frac_delay[0], 0.7));

    let rate = 64e9;
    let field: Vec<C64> = (0..1024)
        .map(|k| {
            let t = k as f64;
            C64::new((0.05 * t).sin() + 0.3 * (0.31 * t).cos(), (0.17 * t).cos()) * 5e-3f64.sqrt()
        })
        .collect();
    let fiber = FiberParams { n_spans: 2, ..FiberParams::default() };
    let fd = fd_subband_dbp_baseline(
        &SubbandSet::new(vec![field.clone()], rate)?,
        &fiber,
        20,
        &FilterBankSpec::passthrough(rate)?,
    )?;
    let full = full_dbp_baseline(&ComplexSignal::new(field, rate)?, &fiber, 20, 2)?;
    let fd_err = rms_diff(fd.band(0), full.samples());
    Ok(outcome(&[
        (folded < 1e-12, format!("folded CD {folded:.1e}")),
        (mimo < 1e-10, format!("MIMO cascade {mimo:.1e}")),
        (scalar < 1e-8, format!("single-subband engine {scalar:.1e}")),
        (fd_err < 1e-6, format!("FD subband S=0 vs full DBP {fd_err:.1e}")),
    ]))
}

fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
    std::fs::create_dir_all(&dir).expect("cache directory");
    dir
}

fn desk_data(config: &ExperimentConfig) -> Result<DataBundle> {
    let path = cache_dir().join(format!("dataset-{}.sdbp", &config.data_digest()[..16]));
    if path.exists() {
        return load_dataset(&path);
    }
    let data = generate_dataset(config)?;
    save_dataset(&path, &data, true)?;
    Ok(data)
}

fn desk_checkpoint(config: &ExperimentConfig, data: &DataBundle) -> Result<Checkpoint> {
    let path = cache_dir().join(format!("checkpoint-{}.sdbp", &config.digest()[..16]));
    if path.exists() {
        return load_checkpoint(&path);
    }
    let ck = train_all(config, data)?;
    save_checkpoint(&path, config, &ck, true)?;
    Ok(ck)
}

fn peak(rows: &[ResultRow], method: Method) -> (f64, f64) {
    rows.iter()
        .filter(|r| r.method == method)
        .map(|r| (r.snr_db, r.power_dbm))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("method evaluated")
}

fn desk_experiment(config: &ExperimentConfig) -> Result<(Outcome, Outcome)> {
    let data = desk_data(config)?;
    let ck = desk_checkpoint(config, &data)?;
    let rows = evaluate(config, &data, Some(&ck))?;
    for r in &rows {
        eprintln!("  {:>5} dBm {:<20} {:6.2} dB", r.power_dbm, r.method.name(), r.snr_db);
    }
    let (lin, lin_p) = peak(&rows, Method::Linear);
    let (sub, sub_p) = peak(&rows, Method::SubbandTddbp);
    let (dense, dense_p) = peak(&rows, Method::SubbandTddbpDense);
    let (fd, fd_p) = peak(&rows, Method::FdSubband);
    let (full, full_p) = peak(&rows, Method::FullDbp);
    let gain = outcome(&[
        (sub - lin >= 1.0, format!("subband {sub:.2} dB ({sub_p} dBm) vs linear {lin:.2} dB ({lin_p} dBm): +{:.2} dB", sub - lin)),
        (sub <= fd + 0.2, format!("FD subband {fd:.2} dB ({fd_p} dBm)")),
        (fd <= full + 0.2, format!("full DBP {full:.2} dB ({full_p} dBm)")),
    ]);
    let worst_sparsity = ck
        .models
        .iter()
        .map(|m| 1.0 - m.meta.nonzeros as f64 / m.meta.capacity as f64)
        .fold(f64::INFINITY, f64::min);
    let sparsity = outcome(&[
        (worst_sparsity >= 0.8, format!("at least {:.1}% of MIMO coefficients removed in every model", 100.0 * worst_sparsity)),
        (
            dense - sub <= 0.1,
            format!("peak SNR {dense:.2} dB ({dense_p} dBm) dense vs {sub:.2} dB thresholded: loss {:.2} dB", dense - sub),
        ),
    ]);
    Ok((gain, sparsity))
}

fn report(n: usize, name: &str, start: Instant, r: Result<Outcome>) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            println!("{} criterion {n} ({name}, {secs:.0} s): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
            o.passed
        }
        Err(e) => {
            println!("FAIL criterion {n} ({name}, {secs:.0} s): error {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let desk = ExperimentConfig::desk();
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "formula regressions", t, formulas());
    let t = Instant::now();
    ok &= report(2, "channel physics", t, channel_physics());
    let t = Instant::now();
    ok &= report(3, "filter bank", t, filter_bank(&desk));
    let t = Instant::now();
    ok &= report(4, "differentiation", t, gradients(&desk));
    let t = Instant::now();
    ok &= report(5, "oracle equivalences", t, oracles());
    let t = Instant::now();
    match desk_experiment(&desk) {
        Ok((gain, sparsity)) => {
            ok &= report(6, "desk-scale gain", t, Ok(gain));
            ok &= report(7, "sparsity", t, Ok(sparsity));
        }
        Err(e) => {
            let msg = e.to_string();
            report(6, "desk-scale gain", t, Err(e));
            println!("FAIL criterion 7 (sparsity): desk experiment failed: {msg}");
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
