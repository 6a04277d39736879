//! Least-squares pre-training of the linear part of the engine on a frequency
//! grid: CD filters against the exact total dispersion, optionally together
//! with the fractional-delay filters and phases against the exact response of
//! every subband. Refinement is block-coordinate descent where every block
//! (one CD filter, one `F_i`, one phase) is solved exactly, so the weighted
//! error never increases.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::engine::{CdFilter, DbpParams, EngineLayout, FRAC_TAPS};
use crate::{Error, Result, C64};

const GRID: usize = 512;

struct Grid {
    theta: Vec<f64>,
    omega: Vec<f64>,
    weight: Vec<f64>,
}

fn grid(layout: &EngineLayout) -> Grid {
    let w = layout.cd_weight();
    let rate = layout.subband_rate();
    let theta: Vec<f64> = (0..GRID).map(|k| -PI + 2.0 * PI * (k as f64 + 0.5) / GRID as f64).collect();
    let omega: Vec<f64> = theta.iter().map(|t| t * rate).collect();
    let weight = omega.iter().map(|o| w.at(o / (2.0 * PI))).collect();
    Grid { theta, omega, weight }
}

/// Response of a CD filter including its delay of `L` samples.
fn cd_response(half: &[C64], theta: f64) -> C64 {
    let l = half.len() - 1;
    let zp: C64 = half
        .iter()
        .enumerate()
        .map(|(d, h)| if d == 0 { *h } else { *h * (2.0 * (theta * d as f64).cos()) })
        .sum();
    zp * C64::cis(-theta * l as f64)
}

fn cd_basis(l: usize, theta: f64) -> Vec<C64> {
    let delay = C64::cis(-theta * l as f64);
    (0..=l).map(|d| if d == 0 { delay } else { delay * (2.0 * (theta * d as f64).cos()) }).collect()
}

/// Weighted complex least squares `min sum w |b^T x - t|^2`.
fn solve_complex(rows: &[(f64, Vec<C64>, C64)]) -> Result<Vec<C64>> {
    let n = rows[0].1.len();
    let mut a = DMatrix::<C64>::zeros(n, n);
    let mut r = DVector::<C64>::zeros(n);
    for (w, b, t) in rows {
        for i in 0..n {
            let bi = b[i].conj() * *w;
            r[i] += bi * t;
            for j in 0..n {
                a[(i, j)] += bi * b[j];
            }
        }
    }
    let x = a.cholesky().ok_or(Error::Singular)?.solve(&r);
    Ok(x.iter().copied().collect())
}

/// Weighted least squares with real unknowns and complex residuals.
fn solve_real(rows: &[(f64, Vec<C64>, C64)]) -> Result<Vec<f64>> {
    let n = rows[0].1.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (w, b, t) in rows {
        for i in 0..n {
            r[i] += w * (b[i].conj() * t).re;
            for j in 0..n {
                a[(i, j)] += w * (b[i].conj() * b[j]).re;
            }
        }
    }
    let x = a.cholesky().ok_or(Error::Singular)?.solve(&r);
    Ok(x.iter().copied().collect())
}

fn total_target(layout: &EngineLayout, g: &Grid) -> Vec<C64> {
    let l = layout.spec.cd_half_len as f64;
    let m = layout.n_steps() as f64;
    let kappa = layout.beta2_ps2_per_km * 1e-24 * layout.plan.total_km() / 2.0;
    g.theta.iter().zip(&g.omega).map(|(t, o)| C64::cis(-t * l * m + kappa * o * o)).collect()
}

/// Weighted mean squared error of the CD cascade against the exact total
/// dispersion compensation.
pub fn cd_cascade_error(layout: &EngineLayout, filters: &[CdFilter]) -> f64 {
    let g = grid(layout);
    let target = total_target(layout, &g);
    let mut err = 0.0;
    for (k, t) in g.theta.iter().enumerate() {
        let h: C64 = filters.iter().map(|f| cd_response(f.half(), *t)).product();
        err += g.weight[k] * (h - target[k]).norm_sqr();
    }
    err / g.weight.iter().sum::<f64>()
}

/// Per-step least-squares CD filters followed by `sweeps` rounds of joint
/// refinement against the total dispersion. Steps of zero length keep the
/// identity filter.
pub fn pretrain_cd(layout: &EngineLayout, sweeps: usize) -> Result<Vec<CdFilter>> {
    let l = layout.spec.cd_half_len;
    let distances = layout.plan.distances();
    let mut filters: Vec<CdFilter> = layout
        .ls_cd_filters()?
        .into_iter()
        .zip(&distances)
        .map(|(f, xi)| if *xi == 0.0 { CdFilter::identity(l) } else { f })
        .collect();
    if distances.iter().all(|xi| *xi == 0.0) {
        return Ok(filters);
    }
    let g = grid(layout);
    let target = total_target(layout, &g);
    for _ in 0..sweeps {
        for s in 0..filters.len() {
            if distances[s] == 0.0 {
                continue;
            }
            let rows: Vec<(f64, Vec<C64>, C64)> = (0..GRID)
                .map(|k| {
                    let t = g.theta[k];
                    let rest: C64 =
                        filters.iter().enumerate().filter(|(j, _)| *j != s).map(|(_, f)| cd_response(f.half(), t)).product();
                    (g.weight[k], cd_basis(l, t).into_iter().map(|b| b * rest).collect(), target[k])
                })
                .collect();
            filters[s] = CdFilter::from_half(solve_complex(&rows)?, distances[s])?;
        }
    }
    Ok(filters)
}

struct SubbandTargets {
    /// Integer delay of each subband outside the CD filters.
    delays: Vec<f64>,
    targets: Vec<Vec<C64>>,
}

fn subband_targets(p: &DbpParams, g: &Grid) -> SubbandTargets {
    let layout = &p.layout;
    let n = layout.n_active();
    let s = layout.spec.half_width as i64;
    let mut delays = vec![0.0; n];
    for step in &layout.steps {
        for (d, w) in delays.iter_mut().zip(&step.walk) {
            *d += (*w + step.max) as f64;
        }
    }
    for (d, f) in delays.iter_mut().zip(&layout.final_delays) {
        *d += *f as f64;
    }
    let d_eng = layout.engine_delay() as f64;
    let kappa = layout.beta2_ps2_per_km * 1e-24 * layout.plan.total_km() / 2.0;
    let targets = (-s..=s)
        .map(|i| {
            let wi = p.bank.omega(i);
            g.theta.iter().zip(&g.omega).map(|(t, o)| C64::cis(-t * d_eng + kappa * (o + wi) * (o + wi))).collect()
        })
        .collect();
    SubbandTargets { delays, targets }
}

fn frac_response(taps: &[f64], theta: f64) -> C64 {
    taps.iter().enumerate().map(|(k, f)| C64::cis(-theta * k as f64) * *f).sum()
}

/// Weighted mean squared error of the linear response of every subband
/// (CD cascade, delay lines, `F_i`, phase) against exact dispersion
/// compensation of that subband.
pub fn linear_response_error(p: &DbpParams) -> f64 {
    let g = grid(&p.layout);
    let st = subband_targets(p, &g);
    let mut err = 0.0;
    for (b, target) in st.targets.iter().enumerate() {
        for (k, t) in g.theta.iter().enumerate() {
            let h: C64 = p.cd.iter().map(|f| cd_response(f.half(), *t)).product();
            let r = h * C64::cis(-t * st.delays[b] + p.phase[b]) * frac_response(&p.frac_delay[b], *t);
            err += g.weight[k] * (r - target[k]).norm_sqr();
        }
    }
    err / (g.weight.iter().sum::<f64>() * st.targets.len() as f64)
}

/// Jointly refine the CD filters, fractional-delay filters and phases of `p`
/// against the exact per-subband dispersion compensation. MIMO filters and
/// prototypes are untouched.
pub fn refine_linear(p: &DbpParams, sweeps: usize) -> Result<DbpParams> {
    let mut p = p.clone();
    let g = grid(&p.layout);
    let st = subband_targets(&p, &g);
    let l = p.layout.spec.cd_half_len;
    let distances = p.layout.plan.distances();
    for _ in 0..sweeps {
        for s in 0..p.cd.len() {
            if distances[s] == 0.0 {
                continue;
            }
            let mut rows = Vec::with_capacity(GRID * st.targets.len());
            for (b, target) in st.targets.iter().enumerate() {
                for k in 0..GRID {
                    let t = g.theta[k];
                    let rest: C64 = p
                        .cd
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != s)
                        .map(|(_, f)| cd_response(f.half(), t))
                        .product::<C64>()
                        * C64::cis(-t * st.delays[b] + p.phase[b])
                        * frac_response(&p.frac_delay[b], t);
                    rows.push((g.weight[k], cd_basis(l, t).into_iter().map(|v| v * rest).collect(), target[k]));
                }
            }
            p.cd[s] = CdFilter::from_half(solve_complex(&rows)?, distances[s])?;
        }
        let cascade: Vec<C64> = g.theta.iter().map(|t| p.cd.iter().map(|f| cd_response(f.half(), *t)).product()).collect();
        for (b, target) in st.targets.iter().enumerate() {
            let base: Vec<C64> =
                g.theta.iter().zip(&cascade).map(|(t, h)| h * C64::cis(-t * st.delays[b] + p.phase[b])).collect();
            let rows: Vec<(f64, Vec<C64>, C64)> = (0..GRID)
                .map(|k| {
                    let basis = (0..FRAC_TAPS).map(|j| base[k] * C64::cis(-g.theta[k] * j as f64)).collect();
                    (g.weight[k], basis, target[k])
                })
                .collect();
            p.frac_delay[b] = solve_real(&rows)?;
            let corr: C64 = (0..GRID)
                .map(|k| {
                    let r = cascade[k] * C64::cis(-g.theta[k] * st.delays[b]) * frac_response(&p.frac_delay[b], g.theta[k]);
                    r.conj() * target[k] * g.weight[k]
                })
                .sum();
            if corr.norm() > 0.0 {
                p.phase[b] = corr.arg();
            }
        }
    }
    p.validate()?;
    Ok(p)
}
