//! SNR sweeps over launch power for every receiver.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::write_atomic;
use super::data::{DataBundle, Split, RRC_SPAN};
use super::model::{check_digest, Checkpoint};
use super::ExperimentConfig;
use crate::channel::{full_dbp_baseline, linear_equalize};
use crate::engine::{fd_subband_dbp_baseline, process_signal, DbpParams};
use crate::filterbank::{analyze, synthesize, FilterBankSpec};
use crate::signal::{aligned_snr_db, dbm_to_watts, matched_filter_at, rrc_taps, ComplexSignal};
use crate::train::Record;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exact dispersion compensation of the whole link.
    Linear,
    /// Trained engine after thresholding.
    SubbandTddbp,
    /// Trained engine before thresholding.
    SubbandTddbpDense,
    FullDbp,
    FdSubband,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Linear, Method::SubbandTddbp, Method::SubbandTddbpDense, Method::FullDbp, Method::FdSubband];

    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::SubbandTddbp => "subband-tddbp",
            Method::SubbandTddbpDense => "subband-tddbp-dense",
            Method::FullDbp => "full-dbp",
            Method::FdSubband => "fd-subband",
        }
    }

    fn needs_checkpoint(self) -> bool {
        matches!(self, Method::SubbandTddbp | Method::SubbandTddbpDense)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub power_dbm: f64,
    pub method: Method,
    pub snr_db: f64,
    /// Number of independent test records pooled into the estimate.
    pub seed_count: usize,
}

/// Run `f` over a circularly extended copy of a periodic record and return
/// one matched-filter output per symbol. `delay` bounds the processing delay
/// so the extension covers it.
fn periodic_symbols(
    rx: &[C64],
    rate: f64,
    sps: usize,
    guard: usize,
    delay: usize,
    taps: &[f64],
    f: impl Fn(&ComplexSignal) -> Result<ComplexSignal>,
) -> Result<Vec<C64>> {
    let n = rx.len();
    let pad = guard * sps + delay;
    let ext: Vec<C64> = (0..n + 2 * pad).map(|k| rx[(k + n - pad % n) % n]).collect();
    let out = f(&ComplexSignal::new(ext, rate)?)?;
    if out.t0_offset() > delay {
        return Err(Error::inconsistent(format!("processing delay {} exceeds the bound {delay}", out.t0_offset())));
    }
    Ok(matched_filter_at(out.samples(), taps, pad + out.t0_offset(), sps, n / sps))
}

struct Receivers<'a> {
    config: &'a ExperimentConfig,
    fd_bank: FilterBankSpec,
    checkpoint: Option<&'a Checkpoint>,
    taps: Vec<f64>,
    rate: f64,
    sps: usize,
}

impl Receivers<'_> {
    fn symbols(&self, method: Method, power_dbm: f64, record: &Record) -> Result<Vec<C64>> {
        let c = self.config;
        let fiber = &c.fiber;
        let guard = c.eval.guard_symbols;
        let run = |delay: usize, f: &dyn Fn(&ComplexSignal) -> Result<ComplexSignal>| {
            periodic_symbols(&record.rx, self.rate, self.sps, guard, delay, &self.taps, f)
        };
        match method {
            Method::Linear => run(0, &|u| linear_equalize(u, fiber)),
            Method::FullDbp => run(0, &|u| full_dbp_baseline(u, fiber, c.eval.full_dbp_steps_per_span, self.sps)),
            Method::FdSubband => {
                let bank = &self.fd_bank;
                run(bank.round_trip_delay(0), &|u| {
                    let sub = analyze(u, bank)?;
                    let out = fd_subband_dbp_baseline(&sub, fiber, c.eval.fd_subband_steps_per_span, bank)?;
                    synthesize(&out, bank)
                })
            }
            Method::SubbandTddbp | Method::SubbandTddbpDense => {
                let model = self
                    .checkpoint
                    .and_then(|ck| ck.model_for(power_dbm))
                    .ok_or_else(|| Error::invalid("subband methods need a checkpoint with at least one model"))?;
                let p: &DbpParams = if method == Method::SubbandTddbp { &model.sparse } else { &model.dense };
                let scale = 1.0 / dbm_to_watts(model.meta.reference_power_dbm).sqrt();
                let delay = p.bank.round_trip_delay(p.layout.engine_delay());
                run(delay, &|u| {
                    let scaled = ComplexSignal::new(u.samples().iter().map(|v| v * scale).collect(), u.sample_rate())?;
                    process_signal(&scaled, p)
                })
            }
        }
    }
}

/// SNR of every configured method at every test launch power, pooled over
/// the test records of that power.
pub fn evaluate(config: &ExperimentConfig, data: &DataBundle, checkpoint: Option<&Checkpoint>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    check_digest("dataset was generated from a different configuration", &config.data_digest(), &data.digest)?;
    if let Some(ck) = checkpoint {
        check_digest("checkpoint was trained on a different dataset", &data.digest, &ck.data_digest)?;
    }
    if checkpoint.is_none() && config.eval.methods.iter().any(|m| m.needs_checkpoint()) {
        return Err(Error::invalid("subband methods need a checkpoint"));
    }
    let e = &config.engine;
    let rx = Receivers {
        config,
        fd_bank: FilterBankSpec::with_prototype(
            e.n_subbands,
            1,
            e.half_width,
            e.rolloff,
            config.eval.fd_prototype_len,
            config.base_rate(),
        )?,
        checkpoint,
        taps: rrc_taps(data.rolloff, RRC_SPAN, data.sps)?,
        rate: config.base_rate(),
        sps: data.sps,
    };
    let jobs: Vec<(f64, Method)> = config
        .simulation
        .eval_powers_dbm
        .iter()
        .flat_map(|p| config.eval.methods.iter().map(move |m| (*p, *m)))
        .collect();
    jobs.par_iter()
        .map(|&(power, method)| {
            let records = data.select(Split::Test, power);
            if records.is_empty() {
                return Err(Error::invalid(format!("no test records at {power} dBm")));
            }
            let mut tx = Vec::new();
            let mut y = Vec::new();
            for r in &records {
                y.extend(rx.symbols(method, power, r)?);
                tx.extend_from_slice(&r.tx);
            }
            let snr_db = aligned_snr_db(&tx, &y)?;
            log::info!("{power} dBm {}: {snr_db:.2} dB", method.name());
            Ok(ResultRow { power_dbm: power, method, snr_db, seed_count: records.len() })
        })
        .collect()
}

/// Results CSV: `power_dbm,method,snr_db,seed_count`.
pub fn write_results_csv(path: &Path, rows: &[ResultRow], overwrite: bool) -> Result<()> {
    let mut s = String::from("power_dbm,method,snr_db,seed_count\n");
    for r in rows {
        writeln!(s, "{},{},{:.4},{}", r.power_dbm, r.method.name(), r.snr_db, r.seed_count).unwrap();
    }
    write_atomic(path, s.as_bytes(), overwrite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::data::generate_dataset;
    use crate::experiment::model::{layout_for, train_all};
    use crate::experiment::tiny_config;

    #[test]
    fn untrained_engine_matches_linear_on_a_linear_link() {
        let mut c = tiny_config();
        c.fiber.gamma_per_w_km = 0.0;
        c.simulation.ase_noise = false;
        c.train.iterations = 1;
        c.train.learning_rate = 0.0;
        c.train.mimo_init_scale = 0.0;
        c.train.batch_size = 1;
        c.train.sequence_symbols = 128;
        c.train.guard_symbols = 32;
        // one whole step of delta and long filters keep the engine far below the common error floor
        c.engine.step_multiple = 1;
        c.engine.cd_half_len = 32;
        c.engine.prototype_len = 257;
        c.fiber.span_km = layout_for(&c).unwrap().plan.delta_km;
        c.eval.methods = vec![Method::Linear, Method::SubbandTddbp, Method::FullDbp];
        let data = generate_dataset(&c).unwrap();
        let ck = train_all(&c, &data).unwrap();
        let rows = evaluate(&c, &data, Some(&ck)).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        for pair in rows.chunks(3) {
            let (lin, sub, full) = (pair[0].snr_db, pair[1].snr_db, pair[2].snr_db);
            assert!((lin - sub).abs() < 0.1, "linear {lin} vs subband {sub}");
            assert!((lin - full).abs() < 1e-6, "linear {lin} vs full {full}");
            assert!(lin > 30.0, "{lin}");
        }
        let mut other = c.clone();
        other.seed = 7;
        let moved = generate_dataset(&other).unwrap();
        assert!(matches!(evaluate(&c, &moved, Some(&ck)), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ResultRow { power_dbm: -1.5, method: Method::FdSubband, snr_db: 12.345678, seed_count: 2 }];
        write_results_csv(&path, &rows, false).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "power_dbm,method,snr_db,seed_count\n-1.5,fd-subband,12.3457,2\n");
        assert!(write_results_csv(&path, &rows, false).is_err());
    }
}
