//! Experiment runner: configuration, persistence, dataset generation,
//! training across launch powers, evaluation sweeps and complexity
//! accounting.
//!
//! A run is described by one TOML file ([`ExperimentConfig`]). Two SHA-256
//! digests are derived from it: the *data digest* covers everything that
//! shapes the simulated waveforms (seed, signal, fiber, simulation) and is
//! embedded in datasets and checkpoints; the *config digest* covers the whole
//! file.

mod complexity;
mod container;
mod data;
mod eval;
mod model;
mod selftest;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::FiberParams;
use crate::engine::EngineSpec;
use crate::train::TrainConfig;
use crate::{Error, Result};

pub use complexity::{fd_baseline_rms, rm_report, rm_report_for_counts, RmReport, StepRm};
pub use container::{read_container, write_container, Array, Container, Kind};
pub use data::{generate_dataset, load_dataset, save_dataset, DataBundle, RecordInfo, Split};
pub use eval::{evaluate, write_results_csv, Method, ResultRow};
pub use model::{
    load_checkpoint, save_checkpoint, train_all, write_curve_csv, Checkpoint, ModelMeta, TrainedModel,
};
pub use selftest::{selftest, Check};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolSource {
    Gaussian,
    Qam16,
    Qam64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub baud_hz: f64,
    pub rolloff: f64,
    pub symbols: SymbolSource,
    pub symbols_per_record: usize,
    /// Samples per symbol of the forward simulation.
    pub simulation_sps: usize,
    /// Samples per symbol handed to every receiver.
    pub receiver_sps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Logarithmic split-step steps per span of the forward model.
    pub steps_per_span: usize,
    pub ase_noise: bool,
    pub train_records: usize,
    pub validation_records: usize,
    pub test_records: usize,
    /// Launch powers with training and validation data (one model each).
    pub train_powers_dbm: Vec<f64>,
    /// Launch powers with test data.
    pub eval_powers_dbm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub full_dbp_steps_per_span: usize,
    pub fd_subband_steps_per_span: usize,
    /// Prototype length of the non-decimated bank used by the frequency-domain
    /// subband reference.
    pub fd_prototype_len: usize,
    /// Symbols of circular context on each side of an evaluated record.
    pub guard_symbols: usize,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub signal: SignalConfig,
    pub fiber: FiberParams,
    pub simulation: SimulationConfig,
    pub engine: EngineSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Serialize)]
struct DataPart<'a> {
    seed: u64,
    signal: &'a SignalConfig,
    fiber: &'a FiberParams,
    simulation: &'a SimulationConfig,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ExperimentConfig {
    /// 32 GBd, 4 x 100 km, 12 subbands (7 processed), 8-fold downsampling.
    pub fn desk() -> Self {
        ExperimentConfig {
            seed: 1,
            signal: SignalConfig {
                baud_hz: 32e9,
                rolloff: 0.1,
                symbols: SymbolSource::Gaussian,
                symbols_per_record: 16384,
                simulation_sps: 4,
                receiver_sps: 2,
            },
            fiber: FiberParams { n_spans: 4, ..FiberParams::default() },
            simulation: SimulationConfig {
                steps_per_span: 200,
                ase_noise: true,
                train_records: 16,
                validation_records: 1,
                test_records: 2,
                train_powers_dbm: vec![0.0, 1.0, 2.0],
                eval_powers_dbm: (-5..=8).map(f64::from).collect(),
            },
            engine: EngineSpec::default(),
            train: TrainConfig { iterations: 400, l1_weight: 2e-4, physics_init: true, ..TrainConfig::default() },
            eval: EvalConfig {
                full_dbp_steps_per_span: 100,
                fd_subband_steps_per_span: 50,
                fd_prototype_len: 129,
                guard_symbols: 256,
                methods: Method::ALL.to_vec(),
            },
        }
    }

    /// 96 GBd over 25 x 100 km with 1000 steps per span forward.
    pub fn paper() -> Self {
        let desk = ExperimentConfig::desk();
        ExperimentConfig {
            signal: SignalConfig { baud_hz: 96e9, symbols_per_record: 65536, ..desk.signal },
            fiber: FiberParams::default(),
            simulation: SimulationConfig {
                steps_per_span: 1000,
                train_records: 32,
                validation_records: 2,
                test_records: 4,
                train_powers_dbm: vec![2.0, 3.0, 4.0, 5.0, 6.0],
                eval_powers_dbm: (-4..=8).map(f64::from).collect(),
                ..desk.simulation
            },
            train: TrainConfig { iterations: 1000, ..desk.train },
            eval: EvalConfig { full_dbp_steps_per_span: 1000, fd_subband_steps_per_span: 1000, ..desk.eval },
            ..desk
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => ExperimentConfig::desk(),
            Scale::Paper => ExperimentConfig::paper(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.signal;
        if !(s.baud_hz > 0.0) || !(0.0..=1.0).contains(&s.rolloff) {
            return Err(Error::Config("baud_hz must be positive and rolloff in [0, 1]".into()));
        }
        if s.receiver_sps < 2 || s.simulation_sps < s.receiver_sps || s.symbols_per_record == 0 {
            return Err(Error::Config(
                "need receiver_sps >= 2, simulation_sps >= receiver_sps and a non-empty record".into(),
            ));
        }
        self.fiber.validate().map_err(|e| Error::Config(e.to_string()))?;
        let sim = &self.simulation;
        if sim.steps_per_span == 0 {
            return Err(Error::Config("steps_per_span must be positive".into()));
        }
        if sim.train_powers_dbm.iter().chain(&sim.eval_powers_dbm).any(|p| !p.is_finite()) {
            return Err(Error::Config("launch powers must be finite".into()));
        }
        if self.eval.full_dbp_steps_per_span == 0 || self.eval.fd_subband_steps_per_span == 0 {
            return Err(Error::Config("baseline steps per span must be positive".into()));
        }
        if 2 * self.eval.guard_symbols >= s.symbols_per_record {
            return Err(Error::Config("eval guard must be shorter than half a record".into()));
        }
        self.train.validate()
    }

    /// Digest of the fields that determine the simulated data.
    pub fn data_digest(&self) -> String {
        let part = DataPart {
            seed: self.seed,
            signal: &self.signal,
            fiber: &self.fiber,
            simulation: &self.simulation,
        };
        sha256_hex(&toml::to_string(&part).expect("configuration serialises"))
    }

    /// Digest of the whole configuration.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_toml())
    }

    pub fn base_rate(&self) -> f64 {
        self.signal.baud_hz * self.signal.receiver_sps as f64
    }
}

/// One short span and a handful of 512-symbol records.
#[cfg(test)]
pub(crate) fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.fiber.n_spans = 1;
    c.signal.symbols_per_record = 512;
    c.simulation.steps_per_span = 10;
    c.simulation.train_records = 2;
    c.simulation.validation_records = 1;
    c.simulation.test_records = 1;
    c.simulation.train_powers_dbm = vec![0.0];
    c.simulation.eval_powers_dbm = vec![0.0, 3.0];
    c.eval.guard_symbols = 64;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_digests() {
        for c in [ExperimentConfig::desk(), ExperimentConfig::paper()] {
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.digest(), c.digest());
            assert_eq!(c.digest().len(), 64);
        }
        assert_ne!(ExperimentConfig::desk().digest(), ExperimentConfig::paper().digest());
    }

    #[test]
    fn every_field_change_moves_the_digest() {
        let base = ExperimentConfig::desk();
        let mut c = base.clone();
        c.train.learning_rate *= 2.0;
        assert_ne!(c.digest(), base.digest());
        assert_eq!(c.data_digest(), base.data_digest());
        let mut c = base.clone();
        c.fiber.nf_db += 0.1;
        assert_ne!(c.digest(), base.digest());
        assert_ne!(c.data_digest(), base.data_digest());
        let mut c = base.clone();
        c.simulation.eval_powers_dbm.push(11.0);
        assert_ne!(c.data_digest(), base.data_digest());
        let mut c = base.clone();
        c.eval.guard_symbols += 1;
        assert_ne!(c.digest(), base.digest());
        assert_eq!(c.data_digest(), base.data_digest());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let text = ExperimentConfig::desk().to_toml().replace("seed = 1", "seed = 1\nsurprise = 3");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let mut c = ExperimentConfig::desk();
        c.signal.receiver_sps = 1;
        assert!(ExperimentConfig::from_toml(&c.to_toml()).is_err());
    }
}
