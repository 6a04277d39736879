//! Quick oracle checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::layout_for;
use super::ExperimentConfig;
use crate::channel::FiberParams;
use crate::engine::{walk_off_delay, DbpParams, EngineLayout, EngineSpec, MimoFilterFactors};
use crate::filterbank::{analyze, synthesize};
use crate::signal::{generate_symbols, pulse_shape, rrc_taps, SignalSpec};
use crate::train::{backward, forward_loss, Example, Graph, ParamVector};
use crate::{Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn snr_db(reference: &[C64], test: &[C64]) -> f64 {
    let signal: f64 = reference.iter().map(|v| v.norm_sqr()).sum();
    let err: f64 = reference.iter().zip(test).map(|(a, b)| (a - b).norm_sqr()).sum();
    10.0 * (signal / err).log10()
}

/// Analysis followed by synthesis of an RRC signal through the engine bank.
fn reconstruction(config: &ExperimentConfig) -> Result<Check> {
    let layout = layout_for(config)?;
    let bank = layout.filter_bank()?;
    let sps = config.signal.receiver_sps;
    let spec = SignalSpec {
        baud: config.signal.baud_hz,
        oversampling: sps,
        rolloff: config.signal.rolloff,
        power_dbm: 0.0,
        n_symbols: 4096,
        seed: config.seed,
    };
    let x = pulse_shape(&generate_symbols(&spec)?, &rrc_taps(spec.rolloff, 64, sps)?, sps, 0.0)?;
    let y = synthesize(&analyze(&x, &bank)?, &bank)?;
    let off = y.t0_offset();
    let (lo, hi) = (1024, x.len() - 1024);
    let snr = snr_db(&x.samples()[lo..hi], &y.samples()[lo + off..hi + off]);
    Ok(Check { name: "filter-bank reconstruction", passed: snr >= 40.0, detail: format!("{snr:.1} dB (need >= 40)") })
}

/// Reverse-mode gradients of a small random engine against central
/// differences.
fn gradients() -> Result<Check> {
    let spec = EngineSpec {
        n_subbands: 6,
        downsample: 4,
        half_width: 1,
        rolloff: 0.45,
        prototype_len: 25,
        step_multiple: 1,
        cd_half_len: 2,
        mimo_factors: 2,
    };
    let layout = EngineLayout::new(&spec, 64e9, &FiberParams { n_spans: 1, ..FiberParams::default() })?;
    let mut p = DbpParams::linear(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for g in p.mimo.iter_mut() {
        *g = MimoFilterFactors::random(g.n_active(), g.n_factors(), g.factor_order(), 0.3, &mut rng);
    }
    let graph = Graph::new(&p, 0.1, 2)?;
    let mut gaussian = |n: usize| -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
    };
    let (n, guard) = (64, 8);
    let batch: Vec<Example> = (0..2)
        .map(|_| Example {
            rx: gaussian(2 * (n + 2 * guard) + graph.delay()),
            tx: gaussian(n),
            mf_start: graph.delay() + 2 * guard,
        })
        .collect();
    let pv = ParamVector::from_params(&p);
    let lambda = 1e-3;
    let (_, tape) = forward_loss(&graph, &pv, &batch, lambda)?;
    let g = backward(&tape)?;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    for seg in pv.segments() {
        let (mut err, mut scale): (f64, f64) = (0.0, 0.0);
        for k in seg.range() {
            let mut plus = pv.clone();
            plus.values_mut()[k] += eps;
            let mut minus = pv.clone();
            minus.values_mut()[k] -= eps;
            let fd = (forward_loss(&graph, &plus, &batch, lambda)?.0 - forward_loss(&graph, &minus, &batch, lambda)?.0)
                / (2.0 * eps);
            err = err.max((fd - g.values()[k]).abs());
            scale = scale.max(fd.abs());
        }
        let rel = if scale > 0.0 { err / scale } else { f64::INFINITY };
        if rel >= worst {
            worst = rel;
            worst_name = &seg.name;
        }
    }
    Ok(Check {
        name: "gradients vs finite differences",
        passed: worst < 1e-4,
        detail: format!("worst relative error {worst:.2e} in {worst_name} (need < 1e-4)"),
    })
}

/// Every uniform step must shift each subband by a whole number of samples.
fn delta_lock(config: &ExperimentConfig) -> Result<Check> {
    let layout = layout_for(config)?;
    let e = &config.engine;
    let mut worst: f64 = 0.0;
    for &(xi, _) in &layout.plan.steps {
        for i in -(e.half_width as i64)..=e.half_width as i64 {
            let (_, frac) = walk_off_delay(i, xi, config.fiber.beta2_ps2_per_km, e.n_subbands, config.base_rate(), e.downsample);
            worst = worst.max(frac.min(1.0 - frac));
        }
    }
    Ok(Check {
        name: "step sizes locked to delta",
        passed: worst < 1e-9,
        detail: format!(
            "{} steps of delta = {:.2} km, largest fractional walk-off {worst:.1e}",
            layout.n_steps(),
            layout.plan.delta_km
        ),
    })
}

/// Run every check against `config`'s engine.
pub fn selftest(config: &ExperimentConfig) -> Result<Vec<Check>> {
    Ok(vec![reconstruction(config)?, gradients()?, delta_lock(config)?])
}
