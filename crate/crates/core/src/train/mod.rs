//! Learning the engine parameters end to end.
//!
//! The receiver (analysis bank, every DBP step, fractional delays, phases,
//! synthesis bank and matched filter) is unrolled into a recorded graph whose
//! loss is the gain-aligned MSE between matched-filter outputs and transmitted
//! symbols. Mini-batches of windows cut from periodic records are evaluated in
//! parallel and their gradients summed in batch order, so a run is a pure
//! function of `(config, dataset, init)`.
//!
//! Received waveforms are scaled by `1/sqrt(P_ref)` before entering the
//! engine, which makes the MIMO coefficients dimensionless phases per unit of
//! normalised intensity.

mod optim;
mod params;
mod pretrain;
mod tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_length, FiberParams};
use crate::engine::{DbpParams, EngineLayout, MimoFilterFactors};
use crate::signal::{aligned_snr_db, dbm_to_watts};
use crate::{Error, Result, C64};

pub use optim::{adam_step, l1_prox, threshold_sparsify, AdamState, SparsityReport};
pub use params::{ParamVector, Segment};
pub use pretrain::{cd_cascade_error, linear_response_error, pretrain_cd, refine_linear};
pub use tape::{backward, backward_mse, forward_loss, Example, Graph, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Mode {
    /// `lambda sign(g)` added to the gradient.
    Subgradient,
    /// Soft-thresholding by `lambda` times the Adam step after every update.
    Proximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate factor applied when validation SNR stops improving.
    pub lr_decay: f64,
    /// Validations without improvement before decaying.
    pub plateau_patience: usize,
    pub min_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub sequence_symbols: usize,
    /// Symbols on each side of a window that are excluded from the loss.
    pub guard_symbols: usize,
    pub l1_weight: f64,
    pub l1_mode: L1Mode,
    pub iterations: usize,
    /// Relative magnitude threshold applied after training.
    pub threshold: f64,
    pub validate_every: usize,
    /// Launch power the received waveforms are normalised to.
    pub reference_power_dbm: f64,
    pub mimo_init_scale: f64,
    /// Start the MIMO diagonal at the analytic SPM values instead of random.
    pub physics_init: bool,
    pub cd_pretrain_sweeps: usize,
    /// Segment name prefixes excluded from training (e.g. `proto_`).
    pub frozen: Vec<String>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.5,
            plateau_patience: 4,
            min_learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            sequence_symbols: 4096,
            guard_symbols: 128,
            l1_weight: 0.0,
            l1_mode: L1Mode::Proximal,
            iterations: 1000,
            threshold: 1e-3,
            validate_every: 25,
            reference_power_dbm: 0.0,
            mimo_init_scale: 1e-2,
            physics_init: false,
            cd_pretrain_sweeps: 4,
            frozen: Vec::new(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config("l1_weight and threshold must be non-negative".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning rate must be >= 0 and lr_decay in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if self.batch_size == 0 || self.sequence_symbols == 0 || self.validate_every == 0 {
            return Err(Error::Config("batch_size, sequence_symbols and validate_every must be positive".into()));
        }
        Ok(())
    }

    /// Scale applied to received samples before the engine.
    pub fn input_scale(&self) -> f64 {
        1.0 / dbm_to_watts(self.reference_power_dbm).sqrt()
    }
}

/// One periodic transmission: `tx.len()` symbols and `sps` samples per symbol
/// of received waveform (physical units, sqrt(W)).
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub power_dbm: f64,
    pub tx: Vec<C64>,
    pub rx: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Digest of the channel and signal configuration that produced the data.
    pub digest: String,
    pub baud: f64,
    pub sps: usize,
    pub rolloff: f64,
    pub train: Vec<Record>,
    pub validation: Vec<Record>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for r in self.train.iter().chain(&self.validation) {
            if r.tx.is_empty() || r.rx.len() != r.tx.len() * self.sps {
                return Err(Error::Format(format!(
                    "record with {} symbols has {} samples at {} samples/symbol",
                    r.tx.len(),
                    r.rx.len(),
                    self.sps
                )));
            }
        }
        Ok(())
    }
}

/// Window of `n` symbols starting at `start`, with `guard` symbols of context
/// on each side and `delay` extra samples at the end so the receiver output
/// covers the whole window. Indices wrap around the periodic record.
pub fn window(record: &Record, start: usize, n: usize, guard: usize, delay: usize, sps: usize, scale: f64) -> Example {
    let ns = record.tx.len();
    let len = record.rx.len();
    let first = (start % ns + ns - guard % ns) % ns * sps;
    let total = sps * (n + 2 * guard) + delay;
    Example {
        rx: (0..total).map(|k| record.rx[(first + k) % len] * scale).collect(),
        tx: (0..n).map(|j| record.tx[(start + j) % ns]).collect(),
        mf_start: delay + sps * guard,
    }
}

/// SNR in dB over all symbols of `records`, each processed as one periodic
/// window.
pub fn evaluate_snr(graph: &Graph, pv: &ParamVector, records: &[Record], guard: usize, scale: f64) -> Result<f64> {
    let mut tx = Vec::new();
    let mut rx = Vec::new();
    for r in records {
        let ex = window(r, 0, r.tx.len(), guard, graph.delay(), graph.sps(), scale);
        rx.extend(graph.equalize(pv, &ex)?);
        tx.extend(ex.tx);
    }
    aligned_snr_db(&tx, &rx)
}

/// Normalised-power integral of the link section backpropagated by each
/// step, in km.
fn step_effective_lengths(layout: &EngineLayout, fiber: &FiberParams) -> Vec<f64> {
    let alpha = fiber.alpha_per_km();
    let total = fiber.total_km();
    let mut end = total;
    let mut out = Vec::new();
    for xi in layout.plan.distances() {
        let start = (end - xi).max(0.0);
        let mut acc = 0.0;
        let mut z = start;
        while z < end - 1e-12 {
            let span_start = (z / fiber.span_km).floor() * fiber.span_km;
            let piece_end = (span_start + fiber.span_km).min(end);
            let a = z - span_start;
            acc += (-alpha * a).exp() * effective_length(alpha, piece_end - z);
            z = piece_end;
        }
        out.push(acc);
        end = start;
    }
    out
}

/// Initial parameters: designed prototypes, pre-trained CD filters, Lagrange
/// `F_i` and analytic phases (jointly refined when `cd_pretrain_sweeps > 0`)
/// and random (or SPM-diagonal) MIMO factors.
pub fn init_params(layout: &EngineLayout, fiber: &FiberParams, config: &TrainConfig) -> Result<DbpParams> {
    let bank = layout.filter_bank()?;
    let cd = pretrain_cd(layout, config.cd_pretrain_sweeps)?;
    let n = layout.n_active();
    let f = layout.spec.mimo_factors;
    let o = layout.factor_order;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_1a7e);
    let mimo = if config.physics_init {
        let p_ref = dbm_to_watts(config.reference_power_dbm);
        step_effective_lengths(layout, fiber)
            .iter()
            .zip(&layout.steps)
            .map(|(leff, step)| {
                let mut g = MimoFilterFactors::zeros(n, f, o);
                for (i, w) in step.walk.iter().enumerate() {
                    // same-time intensity of row i sits at lag W - w_i of the cascade
                    let mut lag = step.max - w;
                    for k in 0..f {
                        let d = lag.min(o);
                        lag -= d;
                        let c = if k == 0 { -fiber.gamma_per_w_km * leff * p_ref } else { 1.0 };
                        g.set(k, i, i, d, c);
                    }
                }
                g
            })
            .collect()
    } else {
        (0..layout.n_steps()).map(|_| MimoFilterFactors::random(n, f, o, config.mimo_init_scale, &mut rng)).collect()
    };
    let p = DbpParams::new(layout.clone(), bank, cd, mimo)?;
    if config.cd_pretrain_sweeps > 0 {
        return refine_linear(&p, config.cd_pretrain_sweeps);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
    pub mse: f64,
    pub l1: f64,
    /// NaN between validations.
    pub val_snr_db: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation SNR (the final ones without
    /// validation data).
    pub params: DbpParams,
    pub curve: Vec<CurvePoint>,
    pub best_val_snr_db: f64,
}

/// Mini-batch Adam training. `expected_digest` is the digest of the channel
/// configuration the caller intends to train for; `None` skips the check.
pub fn train(config: &TrainConfig, data: &Dataset, init: DbpParams, expected_digest: Option<&str>) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    if let Some(d) = expected_digest {
        if d != data.digest {
            return Err(Error::DigestMismatch {
                context: "dataset was generated for a different channel configuration".into(),
                expected: d.into(),
                found: data.digest.clone(),
            });
        }
    }
    if data.train.is_empty() {
        return Err(Error::invalid("dataset has no training records"));
    }
    let graph = Graph::new(&init, data.rolloff, data.sps)?;
    let mut pv = ParamVector::from_params(&init);
    let active = pv.trainable(&init, &config.frozen);
    let l1_idx: Vec<usize> = pv.mimo_indices(&init).into_iter().filter(|k| active[*k]).collect();
    let scale = config.input_scale();
    let mut adam = AdamState::new(pv.len(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let guard = config.guard_symbols;
    let validate = |pv: &ParamVector| -> Result<f64> {
        if data.validation.is_empty() {
            return Ok(f64::NAN);
        }
        evaluate_snr(&graph, pv, &data.validation, guard, scale)
    };
    let mut best_snr = validate(&pv)?;
    let mut best = pv.clone();
    let mut stale = 0;
    let mut curve = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let batch: Vec<Example> = (0..config.batch_size)
            .map(|_| {
                let r = &data.train[rng.random_range(0..data.train.len())];
                let start = rng.random_range(0..r.tx.len());
                window(r, start, config.sequence_symbols, guard, graph.delay(), data.sps, scale)
            })
            .collect();
        let (loss, tape) = forward_loss(&graph, &pv, &batch, config.l1_weight)?;
        let grads = match config.l1_mode {
            L1Mode::Subgradient => backward(&tape)?,
            L1Mode::Proximal => backward_mse(&tape)?,
        };
        let (mse, l1) = (tape.mse(), tape.l1());
        drop(tape);
        adam_step(&mut adam, pv.values_mut(), grads.values(), &active)?;
        if config.l1_mode == L1Mode::Proximal && config.l1_weight > 0.0 {
            l1_prox(&adam, pv.values_mut(), &l1_idx, config.l1_weight);
        }
        let mut val = f64::NAN;
        if (it + 1) % config.validate_every == 0 || it + 1 == config.iterations {
            val = validate(&pv)?;
            if val.is_finite() {
                if !best_snr.is_finite() || val > best_snr + 1e-3 {
                    best_snr = val;
                    best = pv.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.plateau_patience {
                        adam.lr = (adam.lr * config.lr_decay).max(config.min_learning_rate.min(adam.lr));
                        stale = 0;
                    }
                }
            }
            log::info!("iteration {}: loss {loss:.4e} val {val:.2} dB lr {:.1e}", it + 1, adam.lr);
        }
        curve.push(CurvePoint { iteration: it + 1, loss, mse, l1, val_snr_db: val, lr: adam.lr });
    }
    let chosen = if data.validation.is_empty() { &pv } else { &best };
    Ok(TrainOutcome { params: chosen.to_params(&init)?, curve, best_val_snr_db: best_snr })
}
