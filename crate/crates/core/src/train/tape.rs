//! Reverse-mode differentiation over the unrolled receiver.
//!
//! Every batch item records its own list of fused operations together with
//! the value each produced. Gradients of complex quantities use the
//! convention `g = dL/dRe + j dL/dIm`, under which a holomorphic product
//! `y = h x` back-propagates as `g_x = conj(h) g_y`, `g_h = conj(x) g_y`.

use rayon::prelude::*;

use super::params::{Offsets, ParamVector};
use crate::engine::{cd_folded, delay, fir_real, intensity, mimo_factor_apply, nonlinear_phase_rotate, DbpParams};
use crate::filterbank::{analyze_band, modulation_table, synthesize_band_into};
use crate::signal::{matched_filter_at, rrc_taps};
use crate::{Error, Result, C64};

/// One training window: received samples and the transmitted symbols that the
/// matched-filter outputs starting at `mf_start` should reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub rx: Vec<C64>,
    pub tx: Vec<C64>,
    pub mf_start: usize,
}

/// Everything the graph needs besides the parameter values.
#[derive(Debug, Clone)]
pub struct Graph {
    template: DbpParams,
    offsets: Offsets,
    mf_taps: Vec<f64>,
    sps: usize,
    n_params: usize,
}

impl Graph {
    /// Graph for `template`'s structure with an RRC matched filter of the
    /// given rolloff spanning 64 symbols.
    pub fn new(template: &DbpParams, rolloff: f64, sps: usize) -> Result<Self> {
        template.validate()?;
        let pv = ParamVector::from_params(template);
        Ok(Graph {
            template: template.clone(),
            offsets: pv.offsets(template.mimo.len(), template.layout.spec.mimo_factors),
            mf_taps: rrc_taps(rolloff, 64, sps)?,
            sps,
            n_params: pv.len(),
        })
    }

    pub fn template(&self) -> &DbpParams {
        &self.template
    }

    pub fn sps(&self) -> usize {
        self.sps
    }

    /// Base-rate delay from the input of the receiver to its output.
    pub fn delay(&self) -> usize {
        self.template.bank.round_trip_delay(self.template.layout.engine_delay())
    }

    /// Matched-filter outputs for `example` without recording gradients.
    pub fn equalize(&self, pv: &ParamVector, example: &Example) -> Result<Vec<C64>> {
        self.check(pv)?;
        let item = ItemTape::record(self, pv.values(), example, false);
        match &item.values[item.values.len() - 1] {
            Value::C(v) => Ok(v[0].clone()),
            _ => unreachable!("the last recorded op is the matched filter"),
        }
    }

    fn check(&self, pv: &ParamVector) -> Result<()> {
        if pv.len() != self.n_params {
            return Err(Error::LengthMismatch { expected: self.n_params, actual: pv.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    C(Vec<Vec<C64>>),
    R(Vec<Vec<f64>>),
    S(f64),
}

impl Value {
    fn c(&self) -> &[Vec<C64>] {
        match self {
            Value::C(v) => v,
            _ => unreachable!("complex value expected"),
        }
    }

    fn r(&self) -> &[Vec<f64>] {
        match self {
            Value::R(v) => v,
            _ => unreachable!("real value expected"),
        }
    }

    fn s(&self) -> f64 {
        match self {
            Value::S(v) => *v,
            _ => unreachable!("scalar expected"),
        }
    }

    fn add_assign(&mut self, other: Value) {
        match (self, other) {
            (Value::C(a), Value::C(b)) => a.iter_mut().flatten().zip(b.into_iter().flatten()).for_each(|(x, y)| *x += y),
            (Value::R(a), Value::R(b)) => a.iter_mut().flatten().zip(b.into_iter().flatten()).for_each(|(x, y)| *x += y),
            (Value::S(a), Value::S(b)) => *a += b,
            _ => unreachable!("adjoint kinds match their values"),
        }
    }
}

/// Recorded operations; every operation consumes earlier values by index and
/// produces the next value. Multi-band values hold one row per subband.
#[derive(Debug, Clone, PartialEq)]
enum Op {
    Analyze,
    Cd { x: usize, step: usize },
    DelayC { x: usize, delays: Vec<usize> },
    DelayR { x: usize, delays: Vec<usize> },
    AbsSq { x: usize },
    Mimo { x: usize, step: usize, factor: usize },
    Rotate { u: usize, b: usize },
    FracDelay { x: usize },
    Phase { x: usize },
    Synthesize { x: usize, delay: usize },
    MatchedFilter { x: usize, start: usize, count: usize },
    AlignedMse { y: usize },
}

#[derive(Debug, Clone)]
struct ItemTape {
    example: Example,
    ops: Vec<Op>,
    values: Vec<Value>,
}

fn cvec(p: &[f64]) -> Vec<C64> {
    p.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
}

impl ItemTape {
    fn record(graph: &Graph, p: &[f64], example: &Example, with_loss: bool) -> ItemTape {
        let mut t = ItemTape { example: example.clone(), ops: Vec::new(), values: Vec::new() };
        let layout = &graph.template.layout;
        let n = layout.n_active();
        let mut x = t.push(graph, p, Op::Analyze);
        for (l, step) in layout.steps.iter().enumerate() {
            let c = t.push(graph, p, Op::Cd { x, step: l });
            let w = t.push(graph, p, Op::DelayC { x: c, delays: step.walk.clone() });
            let mut v = t.push(graph, p, Op::AbsSq { x: w });
            for f in 0..layout.spec.mimo_factors {
                v = t.push(graph, p, Op::Mimo { x: v, step: l, factor: f });
            }
            let u = t.push(graph, p, Op::DelayC { x: w, delays: vec![step.max; n] });
            let b = t.push(graph, p, Op::DelayR { x: v, delays: step.walk.clone() });
            x = t.push(graph, p, Op::Rotate { u, b });
        }
        let d = t.push(graph, p, Op::DelayC { x, delays: layout.final_delays.clone() });
        let f = t.push(graph, p, Op::FracDelay { x: d });
        let ph = t.push(graph, p, Op::Phase { x: f });
        let s = t.push(graph, p, Op::Synthesize { x: ph, delay: graph.delay() });
        let count = example.tx.len();
        let y = t.push(graph, p, Op::MatchedFilter { x: s, start: example.mf_start, count });
        if with_loss {
            t.push(graph, p, Op::AlignedMse { y });
        }
        t
    }

    fn push(&mut self, graph: &Graph, p: &[f64], op: Op) -> usize {
        let v = eval(graph, p, &self.example, &self.values, &op);
        self.ops.push(op);
        self.values.push(v);
        self.values.len() - 1
    }

    fn loss(&self) -> f64 {
        self.values.last().map(Value::s).unwrap_or(f64::NAN)
    }

    fn replay(&self, graph: &Graph, p: &[f64]) -> f64 {
        let mut values = Vec::with_capacity(self.values.len());
        for op in &self.ops {
            let v = eval(graph, p, &self.example, &values, op);
            values.push(v);
        }
        values.last().map(Value::s).unwrap_or(f64::NAN)
    }

    fn backward(&self, graph: &Graph, p: &[f64], seed: f64, grad: &mut [f64]) {
        let mut adj: Vec<Option<Value>> = vec![None; self.values.len()];
        let last = self.values.len() - 1;
        adj[last] = Some(Value::S(seed));
        for (k, op) in self.ops.iter().enumerate().rev() {
            let Some(g) = adj[k].take() else { continue };
            for (idx, contrib) in adjoint(graph, p, &self.example, &self.values, op, &self.values[k], g, grad) {
                match &mut adj[idx] {
                    Some(a) => a.add_assign(contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
    }
}

/// Aligned normalised MSE `min_a sum |a y - t|^2 / sum |t|^2` and the optimal `a`.
fn aligned_mse(y: &[C64], t: &[C64]) -> (f64, C64) {
    let tt: f64 = t.iter().map(|v| v.norm_sqr()).sum();
    let yy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    if tt == 0.0 {
        return (0.0, C64::new(0.0, 0.0));
    }
    if yy == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    let yt: C64 = y.iter().zip(t).map(|(a, b)| a.conj() * b).sum();
    let a = yt / yy;
    let err: f64 = y.iter().zip(t).map(|(v, b)| (a * v - b).norm_sqr()).sum();
    (err / tt, a)
}

fn eval(graph: &Graph, p: &[f64], ex: &Example, values: &[Value], op: &Op) -> Value {
    let tpl = &graph.template;
    let bank = &tpl.bank;
    let o = &graph.offsets;
    let n_active = tpl.layout.n_active();
    match op {
        Op::Analyze => {
            let taps = &p[o.analysis..o.analysis + bank.analysis_taps().len()];
            Value::C(bank.indices().map(|i| analyze_band(&ex.rx, taps, i, bank.n_subbands(), bank.downsample())).collect())
        }
        Op::Cd { x, step } => {
            let half = cvec(&p[o.cd[*step]..o.cd[*step] + 2 * (tpl.layout.spec.cd_half_len + 1)]);
            Value::C(values[*x].c().iter().map(|b| cd_folded(b, &half)).collect())
        }
        Op::DelayC { x, delays } => Value::C(values[*x].c().iter().zip(delays).map(|(b, d)| delay(b, *d)).collect()),
        Op::DelayR { x, delays } => Value::R(values[*x].r().iter().zip(delays).map(|(b, d)| delay(b, *d)).collect()),
        Op::AbsSq { x } => Value::R(values[*x].c().iter().map(|b| intensity(b)).collect()),
        Op::Mimo { x, step, factor } => {
            let g = &tpl.mimo[*step];
            let off = o.mimo[*step][*factor];
            let coeffs = &p[off..off + g.coeffs()[*factor].len()];
            Value::R(mimo_factor_apply(values[*x].r(), coeffs, &g.masks()[*factor], g.factor_order()))
        }
        Op::Rotate { u, b } => Value::C(
            values[*u].c().iter().zip(values[*b].r()).map(|(x, ph)| nonlinear_phase_rotate(x, ph)).collect(),
        ),
        Op::FracDelay { x } => Value::C(
            values[*x]
                .c()
                .iter()
                .zip(p[o.frac..].chunks(crate::engine::FRAC_TAPS).take(n_active))
                .map(|(b, taps)| fir_real(b, taps))
                .collect(),
        ),
        Op::Phase { x } => Value::C(
            values[*x]
                .c()
                .iter()
                .zip(&p[o.phase..o.phase + n_active])
                .map(|(b, phi)| {
                    let r = C64::cis(*phi);
                    b.iter().map(|v| v * r).collect()
                })
                .collect(),
        ),
        Op::Synthesize { x, delay } => {
            let bands = values[*x].c();
            let taps = &p[o.synthesis..o.synthesis + bank.synthesis_taps().len()];
            let mut out = vec![C64::new(0.0, 0.0); bands[0].len() * bank.downsample()];
            for (y, i) in bands.iter().zip(bank.indices()) {
                synthesize_band_into(&mut out, y, taps, i, bank.n_subbands(), bank.downsample(), *delay);
            }
            Value::C(vec![out])
        }
        Op::MatchedFilter { x, start, count } => {
            Value::C(vec![matched_filter_at(&values[*x].c()[0], &graph.mf_taps, *start, graph.sps, *count)])
        }
        Op::AlignedMse { y } => Value::S(aligned_mse(&values[*y].c()[0], &ex.tx).0),
    }
}

/// Adjoint contributions of `op` to its inputs given the adjoint `g` of its
/// output; parameter gradients are accumulated into `grad`.
#[allow(clippy::too_many_arguments)]
fn adjoint(
    graph: &Graph,
    p: &[f64],
    ex: &Example,
    values: &[Value],
    op: &Op,
    out: &Value,
    g: Value,
    grad: &mut [f64],
) -> Vec<(usize, Value)> {
    let tpl = &graph.template;
    let bank = &tpl.bank;
    let o = &graph.offsets;
    let n_active = tpl.layout.n_active();
    let zero = C64::new(0.0, 0.0);
    match op {
        Op::Analyze => {
            let g = g.c();
            let nn = bank.n_subbands();
            let k = bank.downsample();
            let la = bank.analysis_taps().len();
            for (gy, i) in g.iter().zip(bank.indices()) {
                let rot = modulation_table(i, nn, -1.0);
                for (m, gm) in gy.iter().enumerate() {
                    if *gm == zero {
                        continue;
                    }
                    let base = m * k;
                    for j in 0..la.min(base + 1) {
                        let idx = base - j;
                        let z = ex.rx[idx] * rot[idx % nn];
                        grad[o.analysis + j] += gm.re * z.re + gm.im * z.im;
                    }
                }
            }
            vec![]
        }
        Op::Cd { x, step } => {
            let len = tpl.layout.spec.cd_half_len;
            let half = cvec(&p[o.cd[*step]..o.cd[*step] + 2 * (len + 1)]);
            let xs = values[*x].c();
            let mut gx = Vec::with_capacity(xs.len());
            for (xb, gb) in xs.iter().zip(g.c()) {
                let n = xb.len() as isize;
                let at = |v: &[C64], k: isize| if k >= 0 && k < n { v[k as usize] } else { zero };
                // gradient w.r.t. taps: sum over outputs of conj(s_d) g
                for (d, _) in half.iter().enumerate() {
                    let mut acc = zero;
                    for (k, gk) in gb.iter().enumerate() {
                        let c = k as isize - len as isize;
                        let s = if d == 0 { at(xb, c) } else { at(xb, c - d as isize) + at(xb, c + d as isize) };
                        acc += s.conj() * gk;
                    }
                    grad[o.cd[*step] + 2 * d] += acc.re;
                    grad[o.cd[*step] + 2 * d + 1] += acc.im;
                }
                let hc: Vec<C64> = half.iter().map(|h| h.conj()).collect();
                gx.push(
                    (0..n)
                        .map(|k| {
                            let c = k + len as isize;
                            let mut acc = hc[0] * at(gb, c);
                            for (d, h) in hc.iter().enumerate().skip(1) {
                                acc += *h * (at(gb, c + d as isize) + at(gb, c - d as isize));
                            }
                            acc
                        })
                        .collect(),
                );
            }
            vec![(*x, Value::C(gx))]
        }
        Op::DelayC { x, delays } => {
            let gx = g.c().iter().zip(delays).map(|(b, d)| advance(b, *d)).collect();
            vec![(*x, Value::C(gx))]
        }
        Op::DelayR { x, delays } => {
            let gx = g.r().iter().zip(delays).map(|(b, d)| advance(b, *d)).collect();
            vec![(*x, Value::R(gx))]
        }
        Op::AbsSq { x } => {
            let gx = values[*x].c().iter().zip(g.r()).map(|(b, ga)| b.iter().zip(ga).map(|(v, a)| v * (2.0 * a)).collect()).collect();
            vec![(*x, Value::C(gx))]
        }
        Op::Mimo { x, step, factor } => {
            let gm = &tpl.mimo[*step];
            let off = o.mimo[*step][*factor];
            let mask = &gm.masks()[*factor];
            let taps = gm.factor_order() + 1;
            let input = values[*x].r();
            let gout = g.r();
            let n = input.len();
            let len = input[0].len();
            let mut gin = vec![vec![0.0; len]; n];
            for (i, go) in gout.iter().enumerate() {
                for (j, (a, gi)) in input.iter().zip(gin.iter_mut()).enumerate() {
                    for d in 0..taps {
                        let idx = (i * n + j) * taps + d;
                        if !mask[idx] {
                            continue;
                        }
                        let c = p[off + idx];
                        let mut acc = 0.0;
                        for k in d..len {
                            acc += go[k] * a[k - d];
                            gi[k - d] += c * go[k];
                        }
                        grad[off + idx] += acc;
                    }
                }
            }
            vec![(*x, Value::R(gin))]
        }
        Op::Rotate { u, b } => {
            let us = values[*u].c();
            let ys = out.c();
            let gs = g.c();
            let bs = values[*b].r();
            debug_assert_eq!(us.len(), gs.len());
            let gu = gs.iter().zip(bs).map(|(gb, pb)| gb.iter().zip(pb).map(|(gk, ph)| gk * C64::cis(-ph)).collect()).collect();
            let gb = ys
                .iter()
                .zip(gs)
                .map(|(yb, gb)| yb.iter().zip(gb).map(|(y, gk)| (gk.conj() * C64::i() * y).re).collect())
                .collect();
            vec![(*u, Value::C(gu)), (*b, Value::R(gb))]
        }
        Op::FracDelay { x } => {
            let nt = crate::engine::FRAC_TAPS;
            let xs = values[*x].c();
            let mut gx = Vec::with_capacity(xs.len());
            for (bi, (xb, gb)) in xs.iter().zip(g.c()).enumerate() {
                let taps = &p[o.frac + bi * nt..o.frac + (bi + 1) * nt];
                for (j, _) in taps.iter().enumerate() {
                    let mut acc = 0.0;
                    for k in j..xb.len() {
                        acc += gb[k].re * xb[k - j].re + gb[k].im * xb[k - j].im;
                    }
                    grad[o.frac + bi * nt + j] += acc;
                }
                let n = xb.len();
                gx.push(
                    (0..n)
                        .map(|k| taps.iter().enumerate().filter(|(j, _)| k + j < n).map(|(j, h)| gb[k + j] * *h).sum())
                        .collect(),
                );
            }
            vec![(*x, Value::C(gx))]
        }
        Op::Phase { x } => {
            let ys = out.c();
            let gs = g.c();
            let mut gx = Vec::with_capacity(ys.len());
            for (bi, (yb, gb)) in ys.iter().zip(gs).enumerate() {
                let phi = p[o.phase + bi];
                grad[o.phase + bi] += yb.iter().zip(gb).map(|(y, gk)| (gk.conj() * C64::i() * y).re).sum::<f64>();
                let r = C64::cis(-phi);
                gx.push(gb.iter().map(|v| v * r).collect());
            }
            debug_assert_eq!(gx.len(), n_active);
            vec![(*x, Value::C(gx))]
        }
        Op::Synthesize { x, delay } => {
            let bands = values[*x].c();
            let gout = &g.c()[0];
            let nn = bank.n_subbands();
            let k = bank.downsample();
            let shift = delay % nn;
            let taps = &p[o.synthesis..o.synthesis + bank.synthesis_taps().len()];
            let mut gx = Vec::with_capacity(bands.len());
            for (y, i) in bands.iter().zip(bank.indices()) {
                let rot = modulation_table(i, nn, 1.0);
                let gacc: Vec<C64> =
                    gout.iter().enumerate().map(|(kk, gk)| gk * rot[(kk + nn - shift) % nn].conj()).collect();
                let mut gy = vec![zero; y.len()];
                for (m, (ym, gym)) in y.iter().zip(gy.iter_mut()).enumerate() {
                    let base = m * k;
                    for (j, s) in taps.iter().enumerate() {
                        let kk = base + j;
                        if kk >= gacc.len() {
                            break;
                        }
                        *gym += gacc[kk] * *s;
                        grad[o.synthesis + j] += gacc[kk].re * ym.re + gacc[kk].im * ym.im;
                    }
                }
                gx.push(gy);
            }
            vec![(*x, Value::C(gx))]
        }
        Op::MatchedFilter { x, start, count } => {
            let xs = &values[*x].c()[0];
            let taps = &graph.mf_taps;
            let centre = (taps.len() - 1) / 2;
            let n = xs.len() as isize;
            let mut gx = vec![zero; xs.len()];
            for (m, gm) in g.c()[0].iter().enumerate().take(*count) {
                let kk = (start + m * graph.sps) as isize;
                for (j, h) in taps.iter().enumerate() {
                    let idx = kk + centre as isize - j as isize;
                    if idx >= 0 && idx < n {
                        gx[idx as usize] += gm * *h;
                    }
                }
            }
            vec![(*x, Value::C(vec![gx]))]
        }
        Op::AlignedMse { y } => {
            let ys = &values[*y].c()[0];
            let tt: f64 = ex.tx.iter().map(|v| v.norm_sqr()).sum();
            let (_, a) = aligned_mse(ys, &ex.tx);
            let seed = g.s();
            if tt == 0.0 || a == zero {
                return vec![(*y, Value::C(vec![vec![zero; ys.len()]]))];
            }
            // envelope theorem: the optimal gain is stationary
            let scale = 2.0 * seed / tt;
            let gy = ys.iter().zip(&ex.tx).map(|(v, t)| a.conj() * (a * v - t) * scale).collect();
            vec![(*y, Value::C(vec![gy]))]
        }
    }
}

/// Adjoint of a delay by `d`: shift left, zero-filled at the end.
fn advance<T: Copy + Default>(g: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::default(); g.len()];
    if d < g.len() {
        out[..g.len() - d].copy_from_slice(&g[d..]);
    }
    out
}

/// Recorded forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Tape<'g> {
    graph: &'g Graph,
    params: Vec<f64>,
    l1_weight: f64,
    l1_indices: Vec<usize>,
    items: Vec<ItemTape>,
    mse: f64,
    l1: f64,
    loss: f64,
}

impl Tape<'_> {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Mean aligned MSE over the batch.
    pub fn mse(&self) -> f64 {
        self.mse
    }

    /// `lambda * sum |g|` over the unmasked MIMO coefficients.
    pub fn l1(&self) -> f64 {
        self.l1
    }

    /// Re-run every recorded operation from the stored inputs and parameters
    /// and check the loss is reproduced bit for bit.
    pub fn replay(&self) -> Result<f64> {
        let mse = self.items.iter().map(|t| t.replay(self.graph, &self.params)).sum::<f64>() / self.items.len() as f64;
        let loss = mse + l1_term(&self.params, &self.l1_indices, self.l1_weight);
        if loss.to_bits() != self.loss.to_bits() {
            return Err(Error::ReplayMismatch { recorded: self.loss, replayed: loss });
        }
        Ok(loss)
    }
}

fn l1_term(p: &[f64], idx: &[usize], weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight * idx.iter().map(|k| p[*k].abs()).sum::<f64>()
}

/// Mean aligned MSE of the batch plus `l1_weight * sum |g|` over the unmasked
/// MIMO coefficients. Items are evaluated in parallel.
pub fn forward_loss<'g>(graph: &'g Graph, pv: &ParamVector, batch: &[Example], l1_weight: f64) -> Result<(f64, Tape<'g>)> {
    graph.check(pv)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if l1_weight < 0.0 {
        return Err(Error::invalid("L1 weight must be non-negative"));
    }
    let min_len = graph.delay() + 1;
    for ex in batch {
        if ex.rx.len() < min_len || ex.tx.is_empty() {
            return Err(Error::invalid(format!(
                "example with {} samples and {} symbols is shorter than the receiver delay {}",
                ex.rx.len(),
                ex.tx.len(),
                graph.delay()
            )));
        }
    }
    let p = pv.values();
    let items: Vec<ItemTape> = batch.par_iter().map(|ex| ItemTape::record(graph, p, ex, true)).collect();
    let mse = items.iter().map(ItemTape::loss).sum::<f64>() / items.len() as f64;
    let l1_indices = pv.mimo_indices(&graph.template);
    let l1 = l1_term(p, &l1_indices, l1_weight);
    let loss = mse + l1;
    let tape = Tape { graph, params: p.to_vec(), l1_weight, l1_indices, items, mse, l1, loss };
    Ok((loss, tape))
}

/// Exact gradient of the recorded loss with respect to every parameter. The
/// L1 term uses the subgradient `sign(g)` with `sign(0) = 0`. Per-item
/// gradients are computed in parallel and summed in batch order.
pub fn backward(tape: &Tape) -> Result<ParamVector> {
    let mut out = backward_mse(tape)?;
    if tape.l1_weight > 0.0 {
        let g = out.values_mut();
        for k in &tape.l1_indices {
            let v = tape.params[*k];
            if v != 0.0 {
                g[*k] += tape.l1_weight * v.signum();
            }
        }
    }
    Ok(out)
}

/// Gradient of the MSE part alone.
pub fn backward_mse(tape: &Tape) -> Result<ParamVector> {
    let graph = tape.graph;
    if tape.params.len() != graph.n_params {
        return Err(Error::LengthMismatch { expected: graph.n_params, actual: tape.params.len() });
    }
    let seed = 1.0 / tape.items.len() as f64;
    let grads: Vec<Vec<f64>> = tape
        .items
        .par_iter()
        .map(|item| {
            let mut g = vec![0.0; graph.n_params];
            item.backward(graph, &tape.params, seed, &mut g);
            g
        })
        .collect();
    let mut out = ParamVector::from_params(&graph.template).zeros_like();
    let acc = out.values_mut();
    for g in grads {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    Ok(out)
}
