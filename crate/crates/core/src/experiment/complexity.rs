//! Real-multiplication (RM) accounting per subband and step.

use serde::{Deserialize, Serialize};

use crate::engine::{cd_rm, DbpParams, EngineLayout, StepPlan};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRm {
    pub step: usize,
    pub xi_km: f64,
    pub cd_rm: usize,
    pub mimo_nonzeros: usize,
    /// MIMO multiplications per subband and output sample of this step.
    pub mimo_rm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmReport {
    pub n_active: usize,
    pub n_steps: usize,
    pub mimo_nonzeros: usize,
    pub mimo_capacity: usize,
    pub cd_rm_per_subband_step: f64,
    /// `nonzeros / (|S| M)`.
    pub mimo_rm_per_subband_step: f64,
    pub total_rm_per_subband_step: f64,
    pub per_step: Vec<StepRm>,
}

/// RM report of trained (possibly thresholded) parameters.
pub fn rm_report(params: &DbpParams, plan: &StepPlan) -> Result<RmReport> {
    if *plan != params.layout.plan {
        return Err(Error::inconsistent("step plan differs from the parameters' layout"));
    }
    let counts: Vec<usize> = params.mimo.iter().map(|g| g.nonzero_count()).collect();
    let mut r = rm_report_for_counts(&params.layout, &counts)?;
    r.mimo_capacity = params.mimo_capacity();
    Ok(r)
}

/// RM report for given per-step MIMO nonzero counts; a single count is
/// spread evenly over the steps.
pub fn rm_report_for_counts(layout: &EngineLayout, nonzeros: &[usize]) -> Result<RmReport> {
    let m = layout.n_steps();
    let n = layout.n_active();
    let per_step_counts: Vec<usize> = match nonzeros.len() {
        len if len == m => nonzeros.to_vec(),
        1 => (0..m).map(|l| nonzeros[0] / m + usize::from(l < nonzeros[0] % m)).collect(),
        len => {
            return Err(Error::inconsistent(format!("{len} nonzero counts for {m} steps")));
        }
    };
    let cd = cd_rm(layout.spec.cd_half_len);
    let per_step: Vec<StepRm> = layout
        .plan
        .distances()
        .into_iter()
        .zip(&per_step_counts)
        .enumerate()
        .map(|(step, (xi_km, c))| StepRm { step, xi_km, cd_rm: cd, mimo_nonzeros: *c, mimo_rm: *c as f64 / n as f64 })
        .collect();
    let total: usize = per_step_counts.iter().sum();
    let steps = m.max(1) as f64;
    let cd_avg = per_step.iter().map(|s| s.cd_rm as f64).sum::<f64>() / steps;
    let mimo_avg = total as f64 / (n as f64 * steps);
    let order = layout.factor_order;
    Ok(RmReport {
        n_active: n,
        n_steps: m,
        mimo_nonzeros: total,
        mimo_capacity: layout.spec.mimo_factors * n * n * (order + 1) * m,
        cd_rm_per_subband_step: cd_avg,
        mimo_rm_per_subband_step: mimo_avg,
        total_rm_per_subband_step: cd_avg + mimo_avg,
        per_step,
    })
}

/// RMs per subband and step of frequency-domain subband processing with FFT
/// size `n` and filter memory `d`: `4 (2 n log2 n + 8 n) / (n - d)`.
pub fn fd_baseline_rms(n: usize, d: usize) -> Result<f64> {
    if !n.is_power_of_two() || n <= d {
        return Err(Error::invalid(format!("FFT size {n} must be a power of two above the memory {d}")));
    }
    let nf = n as f64;
    Ok(4.0 * (2.0 * nf * nf.log2() + 8.0 * nf) / (nf - d as f64))
}
