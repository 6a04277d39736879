//! Forward-simulated datasets.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::{read_container, write_container, Array, Container, Kind};
use super::{ExperimentConfig, SymbolSource};
use crate::channel::{log_step_grid, ssfm_propagate};
use crate::fft::resample_periodic;
use crate::signal::{generate_symbols_with, pulse_shape, rrc_taps, Constellation, SignalSpec};
use crate::train::{Dataset, Record};
use crate::{Error, Result};

/// Span of the transmit and matched RRC filters in symbols.
pub(crate) const RRC_SPAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub split: Split,
    pub power_dbm: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    baud_hz: f64,
    sps: usize,
    rolloff: f64,
    records: Vec<RecordInfo>,
}

/// Every record of an experiment, tagged with split and launch power.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub digest: String,
    pub baud: f64,
    pub sps: usize,
    pub rolloff: f64,
    pub records: Vec<(RecordInfo, Record)>,
}

impl DataBundle {
    pub fn select(&self, split: Split, power_dbm: f64) -> Vec<Record> {
        self.records
            .iter()
            .filter(|(i, _)| i.split == split && i.power_dbm == power_dbm)
            .map(|(_, r)| r.clone())
            .collect()
    }

    /// Launch powers present in `split`, in first-appearance order.
    pub fn powers(&self, split: Split) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (i, _) in &self.records {
            if i.split == split && !out.contains(&i.power_dbm) {
                out.push(i.power_dbm);
            }
        }
        out
    }

    /// Training and validation records of one launch power.
    pub fn training_set(&self, power_dbm: f64) -> Dataset {
        Dataset {
            digest: self.digest.clone(),
            baud: self.baud,
            sps: self.sps,
            rolloff: self.rolloff,
            train: self.select(Split::Train, power_dbm),
            validation: self.select(Split::Validation, power_dbm),
        }
    }
}

fn record_seed(seed: u64, split: Split, power_dbm: f64, k: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([split as u8]);
    h.update(power_dbm.to_le_bytes());
    h.update((k as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub(crate) fn record_plan(config: &ExperimentConfig) -> Vec<RecordInfo> {
    let sim = &config.simulation;
    let mut out = Vec::new();
    let mut add = |split, power: f64, count: usize| {
        for k in 0..count {
            out.push(RecordInfo { split, power_dbm: power, seed: record_seed(config.seed, split, power, k) });
        }
    };
    for p in &sim.train_powers_dbm {
        add(Split::Train, *p, sim.train_records);
        add(Split::Validation, *p, sim.validation_records);
    }
    for p in &sim.eval_powers_dbm {
        add(Split::Test, *p, sim.test_records);
    }
    out
}

fn constellation(s: SymbolSource) -> Constellation {
    match s {
        SymbolSource::Gaussian => Constellation::Gaussian,
        SymbolSource::Qam16 => Constellation::Qam(16),
        SymbolSource::Qam64 => Constellation::Qam(64),
    }
}

/// One periodic record: shaped at the simulation rate, propagated with ASE
/// after every amplifier, resampled to the receiver rate.
pub(crate) fn simulate_record(config: &ExperimentConfig, info: &RecordInfo) -> Result<Record> {
    let s = &config.signal;
    let spec = SignalSpec {
        baud: s.baud_hz,
        oversampling: s.simulation_sps,
        rolloff: s.rolloff,
        power_dbm: info.power_dbm,
        n_symbols: s.symbols_per_record,
        seed: info.seed,
    };
    let tx = generate_symbols_with(&spec, constellation(s.symbols))?;
    let u = pulse_shape(&tx, &rrc_taps(s.rolloff, RRC_SPAN, s.simulation_sps)?, s.simulation_sps, info.power_dbm)?;
    let fiber = &config.fiber;
    let grid = log_step_grid(fiber.span_km, config.simulation.steps_per_span, fiber.alpha_db_per_km)?;
    let noise = config.simulation.ase_noise.then_some(info.seed ^ 0xa5e0_a5e0_a5e0_a5e0);
    let rx = ssfm_propagate(&u, fiber, &grid, s.simulation_sps, noise)?;
    Ok(Record {
        power_dbm: info.power_dbm,
        tx: tx.symbols,
        rx: resample_periodic(rx.samples(), s.symbols_per_record * s.receiver_sps),
    })
}

/// Simulate every record of the configuration (in parallel, order-stable).
pub fn generate_dataset(config: &ExperimentConfig) -> Result<DataBundle> {
    config.validate()?;
    let plan = record_plan(config);
    let records = plan
        .par_iter()
        .map(|info| simulate_record(config, info).map(|r| (info.clone(), r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DataBundle {
        digest: config.data_digest(),
        baud: config.signal.baud_hz,
        sps: config.signal.receiver_sps,
        rolloff: config.signal.rolloff,
        records,
    })
}

pub fn save_dataset(path: &Path, data: &DataBundle, overwrite: bool) -> Result<()> {
    let meta = DatasetMeta {
        baud_hz: data.baud,
        sps: data.sps,
        rolloff: data.rolloff,
        records: data.records.iter().map(|(i, _)| i.clone()).collect(),
    };
    let mut c = Container::new(Kind::Dataset, &data.digest);
    c.push("meta", Array::Text(toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?));
    for (k, (_, r)) in data.records.iter().enumerate() {
        c.push(format!("{k}/tx"), Array::C64 { shape: vec![r.tx.len()], data: r.tx.clone() });
        c.push(format!("{k}/rx"), Array::C64 { shape: vec![r.rx.len()], data: r.rx.clone() });
    }
    write_container(path, &c, overwrite)
}

pub fn load_dataset(path: &Path) -> Result<DataBundle> {
    let c = read_container(path, Kind::Dataset)?;
    let meta: DatasetMeta = toml::from_str(c.text("meta")?).map_err(|e| Error::Format(e.to_string()))?;
    let records = meta
        .records
        .into_iter()
        .enumerate()
        .map(|(k, info)| {
            let r = Record {
                power_dbm: info.power_dbm,
                tx: c.complex(&format!("{k}/tx"))?.to_vec(),
                rx: c.complex(&format!("{k}/rx"))?.to_vec(),
            };
            Ok((info, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let bundle = DataBundle { digest: c.digest, baud: meta.baud_hz, sps: meta.sps, rolloff: meta.rolloff, records };
    for (_, r) in &bundle.records {
        if r.rx.len() != r.tx.len() * bundle.sps {
            return Err(Error::Format("record length does not match samples per symbol".into()));
        }
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::tiny_config;

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let c = tiny_config();
        let a = generate_dataset(&c).unwrap();
        let b = generate_dataset(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 2 + 1 + 2);
        assert_eq!(a.powers(Split::Test), vec![0.0, 3.0]);
        let set = a.training_set(0.0);
        assert_eq!((set.train.len(), set.validation.len()), (2, 1));
        assert_ne!(set.train[0].tx, set.train[1].tx);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.sdbp");
        save_dataset(&path, &a, false).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), a);
        save_dataset(&path, &b, true).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn seeds_differ_by_split_power_and_index() {
        let s = [
            record_seed(1, Split::Train, 0.0, 0),
            record_seed(1, Split::Train, 0.0, 1),
            record_seed(1, Split::Test, 0.0, 0),
            record_seed(1, Split::Train, 1.0, 0),
            record_seed(2, Split::Train, 0.0, 0),
        ];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}
