//! Training one engine per launch power and persisting the results.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_container, write_atomic, write_container, Array, Container, Kind};
use super::data::DataBundle;
use super::ExperimentConfig;
use crate::channel::FiberParams;
use crate::engine::{DbpParams, EngineLayout, EngineSpec};
use crate::train::{
    evaluate_snr, init_params, threshold_sparsify, train, CurvePoint, Graph, ParamVector, TrainConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub power_dbm: f64,
    /// Received waveforms are scaled by `1/sqrt(P_ref)` before this model.
    pub reference_power_dbm: f64,
    /// Validation SNR of the unthresholded model.
    pub dense_val_snr_db: f64,
    pub sparse_val_snr_db: f64,
    pub threshold: f64,
    pub nonzeros: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub meta: ModelMeta,
    pub dense: DbpParams,
    /// `dense` after magnitude thresholding.
    pub sparse: DbpParams,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Digest of the dataset the models were trained on.
    pub data_digest: String,
    pub config_digest: String,
    pub models: Vec<TrainedModel>,
}

impl Checkpoint {
    /// Model trained closest to `power_dbm` (the lower one on ties).
    pub fn model_for(&self, power_dbm: f64) -> Option<&TrainedModel> {
        self.models.iter().min_by(|a, b| {
            let da = (a.meta.power_dbm - power_dbm).abs();
            let db = (b.meta.power_dbm - power_dbm).abs();
            da.total_cmp(&db).then(a.meta.power_dbm.total_cmp(&b.meta.power_dbm))
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config_digest: String,
    base_rate_hz: f64,
    engine: EngineSpec,
    fiber: FiberParams,
    models: Vec<ModelMeta>,
}

pub(crate) fn layout_for(config: &ExperimentConfig) -> Result<EngineLayout> {
    EngineLayout::new(&config.engine, config.base_rate(), &config.fiber)
}

pub(crate) fn check_digest(context: &str, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::DigestMismatch { context: context.into(), expected: expected.into(), found: found.into() });
    }
    Ok(())
}

/// Train, threshold and validate one model per training launch power.
pub fn train_all(config: &ExperimentConfig, data: &DataBundle) -> Result<Checkpoint> {
    config.validate()?;
    let digest = config.data_digest();
    check_digest("dataset was generated from a different configuration", &digest, &data.digest)?;
    let layout = layout_for(config)?;
    let mut models = Vec::new();
    for &power in &config.simulation.train_powers_dbm {
        let tc = TrainConfig { reference_power_dbm: power, ..config.train.clone() };
        let set = data.training_set(power);
        if set.train.is_empty() {
            return Err(Error::invalid(format!("no training records at {power} dBm")));
        }
        log::info!("training at {power} dBm on {} records", set.train.len());
        let init = init_params(&layout, &config.fiber, &tc)?;
        let outcome = train(&tc, &set, init, Some(&digest))?;
        let (sparse, report) = threshold_sparsify(&outcome.params, tc.threshold)?;
        let graph = Graph::new(&outcome.params, data.rolloff, data.sps)?;
        let val = |p: &DbpParams| -> Result<f64> {
            if set.validation.is_empty() {
                return Ok(f64::NAN);
            }
            evaluate_snr(&graph, &ParamVector::from_params(p), &set.validation, tc.guard_symbols, tc.input_scale())
        };
        let meta = ModelMeta {
            power_dbm: power,
            reference_power_dbm: power,
            dense_val_snr_db: val(&outcome.params)?,
            sparse_val_snr_db: val(&sparse)?,
            threshold: tc.threshold,
            nonzeros: report.total,
            capacity: report.capacity,
        };
        log::info!(
            "{power} dBm: validation {:.2} dB dense, {:.2} dB with {}/{} coefficients",
            meta.dense_val_snr_db,
            meta.sparse_val_snr_db,
            meta.nonzeros,
            meta.capacity
        );
        models.push(TrainedModel { meta, dense: outcome.params, sparse, curve: outcome.curve });
    }
    Ok(Checkpoint { data_digest: digest, config_digest: config.digest(), models })
}

fn push_params(c: &mut Container, prefix: &str, p: &DbpParams) {
    let pv = ParamVector::from_params(p);
    for s in pv.segments() {
        c.push(format!("{prefix}/{}", s.name), Array::F64 { shape: s.shape.clone(), data: pv.values()[s.range()].to_vec() });
    }
    for (l, g) in p.mimo.iter().enumerate() {
        for (f, m) in g.masks().iter().enumerate() {
            c.push(
                format!("{prefix}/mask/{l}/{f}"),
                Array::U8 { shape: vec![m.len()], data: m.iter().map(|b| u8::from(*b)).collect() },
            );
        }
    }
}

fn read_params(c: &Container, prefix: &str, template: &DbpParams) -> Result<DbpParams> {
    let mut pv = ParamVector::from_params(template);
    let segments = pv.segments().to_vec();
    for s in &segments {
        let data = c.f64s(&format!("{prefix}/{}", s.name))?;
        if data.len() != s.len() {
            return Err(Error::Format(format!("{prefix}/{} has {} values, expected {}", s.name, data.len(), s.len())));
        }
        pv.values_mut()[s.range()].copy_from_slice(data);
    }
    let mut p = pv.to_params(template)?;
    for (l, g) in p.mimo.iter_mut().enumerate() {
        let masks = (0..g.n_factors())
            .map(|f| {
                let m = c.bytes(&format!("{prefix}/mask/{l}/{f}"))?;
                if m.len() != g.coeffs()[f].len() {
                    return Err(Error::Format(format!("mask {l}/{f} has the wrong length")));
                }
                Ok(m.iter().map(|b| *b != 0).collect())
            })
            .collect::<Result<Vec<Vec<bool>>>>()?;
        g.set_masks(masks);
    }
    Ok(p)
}

pub fn save_checkpoint(path: &Path, config: &ExperimentConfig, ck: &Checkpoint, overwrite: bool) -> Result<()> {
    let meta = CheckpointMeta {
        config_digest: ck.config_digest.clone(),
        base_rate_hz: config.base_rate(),
        engine: config.engine.clone(),
        fiber: config.fiber.clone(),
        models: ck.models.iter().map(|m| m.meta.clone()).collect(),
    };
    let mut c = Container::new(Kind::Checkpoint, &ck.data_digest);
    c.push("meta", Array::Text(toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?));
    for (k, m) in ck.models.iter().enumerate() {
        push_params(&mut c, &format!("model/{k}/dense"), &m.dense);
        push_params(&mut c, &format!("model/{k}/sparse"), &m.sparse);
    }
    write_container(path, &c, overwrite)
}

/// Load a checkpoint; the engine layout is rebuilt from the stored engine
/// and fiber description.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = read_container(path, Kind::Checkpoint)?;
    let meta: CheckpointMeta = toml::from_str(c.text("meta")?).map_err(|e| Error::Format(e.to_string()))?;
    let layout = EngineLayout::new(&meta.engine, meta.base_rate_hz, &meta.fiber)?;
    let template = DbpParams::linear(layout)?;
    let models = meta
        .models
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            Ok(TrainedModel {
                dense: read_params(&c, &format!("model/{k}/dense"), &template)?,
                sparse: read_params(&c, &format!("model/{k}/sparse"), &template)?,
                meta: m,
                curve: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { data_digest: c.digest, config_digest: meta.config_digest, models })
}

/// Training curve CSV: `iteration,loss,mse,l1,val_snr_db,lr`.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint], overwrite: bool) -> Result<()> {
    let mut s = String::from("iteration,loss,mse,l1,val_snr_db,lr\n");
    for p in curve {
        let val = if p.val_snr_db.is_finite() { format!("{:.4}", p.val_snr_db) } else { String::new() };
        writeln!(s, "{},{:.6e},{:.6e},{:.6e},{val},{:.3e}", p.iteration, p.loss, p.mse, p.l1, p.lr).unwrap();
    }
    write_atomic(path, s.as_bytes(), overwrite)
}
