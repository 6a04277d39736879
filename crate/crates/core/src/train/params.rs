//! Flat view over every trainable array of [`DbpParams`].

use crate::engine::{CdFilter, DbpParams, MimoFilterFactors, FRAC_TAPS};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named segments in a fixed order: `proto_analysis`, `proto_synthesis`,
/// `cd/{step}` (`[L+1, 2]`, real and imaginary parts interleaved),
/// `mimo/{step}/{factor}` (`[n, n, o+1]`), `frac_delay` (`[n, 8]`) and
/// `phase` (`[n]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

/// Offsets of the segments inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Offsets {
    pub analysis: usize,
    pub synthesis: usize,
    pub cd: Vec<usize>,
    pub mimo: Vec<Vec<usize>>,
    pub frac: usize,
    pub phase: usize,
}

impl ParamVector {
    pub fn from_params(p: &DbpParams) -> Self {
        let mut pv = ParamVector { segments: Vec::new(), values: Vec::new() };
        pv.push("proto_analysis".into(), vec![p.bank.analysis_taps().len()], p.bank.analysis_taps());
        pv.push("proto_synthesis".into(), vec![p.bank.synthesis_taps().len()], p.bank.synthesis_taps());
        for (l, f) in p.cd.iter().enumerate() {
            let flat: Vec<f64> = f.half().iter().flat_map(|h| [h.re, h.im]).collect();
            pv.push(format!("cd/{l}"), vec![f.half().len(), 2], &flat);
        }
        for (l, g) in p.mimo.iter().enumerate() {
            let n = g.n_active();
            for (f, c) in g.coeffs().iter().enumerate() {
                pv.push(format!("mimo/{l}/{f}"), vec![n, n, g.factor_order() + 1], c);
            }
        }
        let frac: Vec<f64> = p.frac_delay.iter().flatten().copied().collect();
        pv.push("frac_delay".into(), vec![p.frac_delay.len(), FRAC_TAPS], &frac);
        pv.push("phase".into(), vec![p.phase.len()], &p.phase);
        pv
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: &[f64]) {
        let offset = self.values.len();
        self.values.extend_from_slice(data);
        self.segments.push(Segment { name, shape, offset });
    }

    /// Write the values back into a copy of `template`, which supplies the
    /// layout, masks and everything else that is not trained.
    pub fn to_params(&self, template: &DbpParams) -> Result<DbpParams> {
        let reference = ParamVector::from_params(template);
        if reference.segments != self.segments {
            return Err(Error::inconsistent("parameter vector layout differs from the template"));
        }
        let get = |name: &str| self.segment(name).expect("segment present in matching layout");
        let mut p = template.clone();
        p.bank = template.bank.with_taps(get("proto_analysis").to_vec(), get("proto_synthesis").to_vec())?;
        for (l, f) in p.cd.iter_mut().enumerate() {
            let half = get(&format!("cd/{l}")).chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            *f = CdFilter::from_half(half, f.xi_km)?;
        }
        for (l, g) in p.mimo.iter_mut().enumerate() {
            let coeffs = (0..g.n_factors()).map(|f| get(&format!("mimo/{l}/{f}")).to_vec()).collect();
            let mut next = MimoFilterFactors::from_coeffs(g.n_active(), g.factor_order(), coeffs)?;
            next.set_masks(g.masks().to_vec());
            *g = next;
        }
        p.frac_delay = get("frac_delay").chunks(FRAC_TAPS).map(<[f64]>::to_vec).collect();
        p.phase = get("phase").to_vec();
        p.validate()?;
        Ok(p)
    }

    /// Same layout, all values zero.
    pub fn zeros_like(&self) -> Self {
        ParamVector { segments: self.segments.clone(), values: vec![0.0; self.values.len()] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.segments.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn offsets(&self, n_steps: usize, n_factors: usize) -> Offsets {
        let at = |name: &str| self.segments.iter().find(|s| s.name == name).map(|s| s.offset).unwrap_or(0);
        Offsets {
            analysis: at("proto_analysis"),
            synthesis: at("proto_synthesis"),
            cd: (0..n_steps).map(|l| at(&format!("cd/{l}"))).collect(),
            mimo: (0..n_steps).map(|l| (0..n_factors).map(|f| at(&format!("mimo/{l}/{f}"))).collect()).collect(),
            frac: at("frac_delay"),
            phase: at("phase"),
        }
    }

    /// `true` for coordinates that may change: masked-out MIMO coefficients
    /// and segments whose name starts with one of `frozen` are excluded.
    pub fn trainable(&self, template: &DbpParams, frozen: &[String]) -> Vec<bool> {
        let mut out = vec![true; self.values.len()];
        for s in &self.segments {
            if frozen.iter().any(|f| s.name.starts_with(f.as_str())) {
                out[s.range()].iter_mut().for_each(|v| *v = false);
            }
        }
        let offs = self.offsets(template.mimo.len(), template.layout.spec.mimo_factors);
        for (g, o) in template.mimo.iter().zip(&offs.mimo) {
            for (mask, off) in g.masks().iter().zip(o) {
                for (k, m) in mask.iter().enumerate() {
                    if !m {
                        out[off + k] = false;
                    }
                }
            }
        }
        out
    }

    /// Indices of the unmasked MIMO coefficients.
    pub(crate) fn mimo_indices(&self, template: &DbpParams) -> Vec<usize> {
        let offs = self.offsets(template.mimo.len(), template.layout.spec.mimo_factors);
        let mut out = Vec::new();
        for (g, o) in template.mimo.iter().zip(&offs.mimo) {
            for (mask, off) in g.masks().iter().zip(o) {
                out.extend(mask.iter().enumerate().filter(|(_, m)| **m).map(|(k, _)| off + k));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FiberParams;
    use crate::engine::{EngineLayout, EngineSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DbpParams {
        let fiber = FiberParams { n_spans: 4, ..FiberParams::default() };
        let spec = EngineSpec { prototype_len: 49, ..EngineSpec::default() };
        let layout = EngineLayout::new(&spec, 64e9, &fiber).unwrap();
        let mut p = DbpParams::linear(layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in p.mimo.iter_mut() {
            *g = MimoFilterFactors::random(g.n_active(), g.n_factors(), g.factor_order(), 0.1, &mut rng);
        }
        p
    }

    #[test]
    fn round_trip_is_identity() {
        let p = params();
        let pv = ParamVector::from_params(&p);
        assert_eq!(pv.to_params(&p).unwrap(), p);
        let names: Vec<&str> = pv.segments().iter().map(|s| s.name.as_str()).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
        assert_eq!(pv.segments().iter().map(Segment::len).sum::<usize>(), pv.len());
    }

    #[test]
    fn values_land_in_the_right_place() {
        let p = params();
        let mut pv = ParamVector::from_params(&p);
        pv.segment_mut("cd/1").unwrap()[3] = 0.25;
        pv.segment_mut("mimo/0/2").unwrap()[5] = -1.5;
        pv.segment_mut("phase").unwrap()[6] = 0.125;
        let q = pv.to_params(&p).unwrap();
        assert_eq!(q.cd[1].half()[1].im, 0.25);
        assert_eq!(q.mimo[0].coeffs()[2][5], -1.5);
        assert_eq!(q.phase[6], 0.125);
    }

    #[test]
    fn masks_and_frozen_segments_are_not_trainable() {
        let mut p = params();
        let mut masks = p.mimo[0].masks().to_vec();
        masks[1][4] = false;
        p.mimo[0].set_masks(masks);
        let pv = ParamVector::from_params(&p);
        let t = pv.trainable(&p, &["proto_".to_string()]);
        let off = pv.segments().iter().find(|s| s.name == "mimo/0/1").unwrap().offset;
        assert!(!t[off + 4]);
        assert!(t[off + 3]);
        assert!(!t[0]);
        assert_eq!(pv.mimo_indices(&p).len(), p.mimo_capacity() - 1);
    }
}
