//! Adam with bias correction, the proximal L1 step and magnitude thresholding.

use serde::{Deserialize, Serialize};

use crate::engine::{DbpParams, MimoFilterFactors};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr, beta1, beta2, eps }
    }

    /// Effective per-coordinate step size `lr_t / (sqrt(v_hat) + eps)` of the
    /// most recent update, used by the proximal L1 step.
    pub fn step_size(&self, k: usize) -> f64 {
        if self.step == 0 {
            return 0.0;
        }
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        self.lr / ((self.v[k] / bc2).sqrt() + self.eps)
    }
}

/// One Adam update of the coordinates with `active[k]`; the others keep their
/// values and moments.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], active: &[bool]) -> Result<()> {
    let n = state.m.len();
    if params.len() != n || grads.len() != n || active.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: params.len().max(grads.len()).max(active.len()) });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for k in 0..n {
        if !active[k] {
            continue;
        }
        let g = grads[k];
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        let mh = state.m[k] / bc1;
        let vh = state.v[k] / bc2;
        params[k] -= state.lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// Soft-threshold the coordinates in `indices` by `weight` times their Adam
/// step size.
pub fn l1_prox(state: &AdamState, params: &mut [f64], indices: &[usize], weight: f64) {
    for k in indices {
        let shrink = weight * state.step_size(*k);
        let v = params[*k];
        params[*k] = v.signum() * (v.abs() - shrink).max(0.0);
    }
}

/// Nonzero MIMO coefficients after thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub threshold: f64,
    /// Per step: nonzero count summed over factors.
    pub per_step: Vec<usize>,
    pub total: usize,
    pub capacity: usize,
    /// MIMO real multiplications per subband and step after thresholding.
    pub mimo_rm_per_subband_step: f64,
}

impl SparsityReport {
    pub fn of(params: &DbpParams, threshold: f64) -> Self {
        let per_step: Vec<usize> = params.mimo.iter().map(MimoFilterFactors::nonzero_count).collect();
        let total = per_step.iter().sum();
        let steps = params.mimo.len().max(1);
        SparsityReport {
            threshold,
            per_step,
            total,
            capacity: params.mimo_capacity(),
            mimo_rm_per_subband_step: total as f64 / (params.layout.n_active() * steps) as f64,
        }
    }

    /// Fraction of the capacity that is zero.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.total as f64 / self.capacity.max(1) as f64
    }
}

/// Zero and mask every MIMO coefficient with `|g| < tau max|g|` (maximum over
/// all steps and factors).
pub fn threshold_sparsify(params: &DbpParams, tau: f64) -> Result<(DbpParams, SparsityReport)> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("threshold must be non-negative"));
    }
    let max = params
        .mimo
        .iter()
        .flat_map(|g| g.coeffs().iter().zip(g.masks()).flat_map(|(c, m)| c.iter().zip(m)))
        .filter(|(_, m)| **m)
        .map(|(c, _)| c.abs())
        .fold(0.0, f64::max);
    let level = tau * max;
    let mut out = params.clone();
    for g in out.mimo.iter_mut() {
        let mut masks = g.masks().to_vec();
        for (c, m) in g.coeffs_mut().iter_mut().zip(masks.iter_mut()) {
            for (v, k) in c.iter_mut().zip(m.iter_mut()) {
                if !*k || v.abs() < level || tau >= 1.0 {
                    *v = 0.0;
                    *k = false;
                }
            }
        }
        g.set_masks(masks);
    }
    let report = SparsityReport::of(&out, tau);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FiberParams;
    use crate::engine::{EngineLayout, EngineSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new(3, 1e-2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0, 3.0];
        adam_step(&mut s, &mut p, &[0.0; 3], &[true; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let mut s = AdamState::new(3, 1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0; 3];
        adam_step(&mut s, &mut p, &[0.5, -7.0, 2e3], &[true; 3]).unwrap();
        for (v, g) in p.iter().zip([0.5f64, -7.0, 2e3]) {
            assert!((v + 1e-3 * g.signum()).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut s = AdamState::new(4, 1e-2, 0.9, 0.999, 1e-8);
            let mut p = vec![0.1, 0.2, 0.3, 0.4];
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|v| v * v - 0.01 * k as f64).collect();
                adam_step(&mut s, &mut p, &g, &[true; 4]).unwrap();
            }
            (s, p)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prox_zeroes_small_coordinates() {
        let mut s = AdamState::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.05, 1.0];
        adam_step(&mut s, &mut p, &[1.0, 1.0], &[true, true]).unwrap();
        l1_prox(&s, &mut p, &[0, 1], 1.0);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.8).abs() < 1e-6);
    }

    fn random_params() -> DbpParams {
        let fiber = FiberParams { n_spans: 2, ..FiberParams::default() };
        let layout = EngineLayout::new(&EngineSpec::default(), 64e9, &fiber).unwrap();
        let mut p = DbpParams::linear(layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for g in p.mimo.iter_mut() {
            *g = MimoFilterFactors::random(g.n_active(), g.n_factors(), g.factor_order(), 1.0, &mut rng);
        }
        p
    }

    #[test]
    fn threshold_extremes_and_monotonicity() {
        let p = random_params();
        let (q, r) = threshold_sparsify(&p, 0.0).unwrap();
        assert_eq!(r.total, p.mimo_nonzeros());
        assert_eq!(q, p);
        let (_, r) = threshold_sparsify(&p, 1.0).unwrap();
        assert_eq!(r.total, 0);
        let (_, r) = threshold_sparsify(&p, 2.0).unwrap();
        assert_eq!(r.total, 0);
        let mut last = usize::MAX;
        for tau in [0.0, 1e-3, 0.01, 0.1, 0.3, 0.5, 0.9, 0.99] {
            let (q, r) = threshold_sparsify(&p, tau).unwrap();
            assert!(r.total <= last);
            assert_eq!(r.total, q.mimo_nonzeros());
            assert_eq!(r.per_step.iter().sum::<usize>(), r.total);
            last = r.total;
        }
        assert!(threshold_sparsify(&p, -1.0).is_err());
    }
}
