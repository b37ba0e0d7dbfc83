//! Local minimization of the full energy over patterns.
//!
//! Positions and times are relaxed at fixed topology: interior positions by
//! an exact solve of the kinetic quadratic, tip positions by gradient descent
//! on the reduced energy, node times by one-dimensional convex searches.
//! Discrete moves are accepted only when they lower the energy, so traces are
//! monotone. Only the half pattern `[0, T]` is optimized.

use std::time::Instant;

use num::complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::ConstructionSpec;
use crate::error::{Error, Result};
use crate::measure::Kernel;
use crate::pattern::{BoundaryMode, EnergyBreakdown, IrrigationPattern, PatternBuilder, TipKind, TIME_TOL};
use crate::series::{periodic_cos, periodic_sin};
use crate::spectral::sin_pi;
use crate::validate::{equipartition_residual, validate, ValidationConfig, ValidationReport};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Relaxation budget for screening move candidates, and how many survive it.
const SCREEN_ITERS: usize = 8;
const SCREEN_KEEP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    /// Join two neighboring children of a node through a new branch point.
    MergeSiblings,
    /// Insert a node in a tip edge and split the tip into two half-mass tips.
    SplitEdge,
    /// Re-optimize all node times.
    RetimeNode,
    /// Drop edges carrying negligible mass and contract edges of negligible duration.
    PruneZero,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::MergeSiblings, Move::SplitEdge, Move::RetimeNode, Move::PruneZero];
}

fn default_k() -> usize {
    1024
}
fn default_outer() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-10
}
fn default_moves() -> Vec<Move> {
    Move::ALL.to_vec()
}
fn default_inner() -> usize {
    300
}
fn default_candidates() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub s: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    pub boundary_mode: BoundaryMode,
    #[serde(default = "default_outer")]
    pub max_outer_iters: usize,
    /// Relative energy decrease below which relaxation stops and moves are rejected.
    #[serde(default = "default_tol")]
    pub position_tol: f64,
    #[serde(default = "default_moves")]
    pub topology_moves: Vec<Move>,
    #[serde(default)]
    pub restarts: Vec<ConstructionSpec>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Amplitude of the random tip jitter applied to each seed; zero disables it.
    #[serde(default)]
    pub perturb: f64,
    #[serde(default = "default_inner")]
    pub max_inner_iters: usize,
    /// Candidates tried per move kind and outer iteration.
    #[serde(default = "default_candidates")]
    pub max_candidates: usize,
}

impl OptimizerConfig {
    pub fn new(s: f64, t: f64, boundary_mode: BoundaryMode) -> Self {
        Self {
            s,
            t,
            k: default_k(),
            boundary_mode,
            max_outer_iters: default_outer(),
            position_tol: default_tol(),
            topology_moves: default_moves(),
            restarts: Vec::new(),
            rng_seed: 0,
            perturb: 0.0,
            max_inner_iters: default_inner(),
            max_candidates: default_candidates(),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::InvalidParameter(format!("s = {} outside (0, 1)", self.s)));
        }
        if !(self.t > 0.0) || !(self.position_tol > 0.0) || self.k == 0 {
            return Err(Error::InvalidParameter("T, K and tolerances must be positive".into()));
        }
        if self.boundary_mode == BoundaryMode::Atomic && self.s <= 0.5 {
            return Err(Error::DivergentBoundaryNorm(self.s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub energy: EnergyBreakdown,
    #[serde(rename = "move")]
    pub applied: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationTrace {
    pub seed_index: usize,
    pub iterations: Vec<TraceStep>,
    pub pattern: IrrigationPattern,
    pub equipartition_residual: f64,
    pub validation: ValidationReport,
    /// The move loop stopped because no move helped, not at the iteration cap.
    pub converged: bool,
    pub wall_time: f64,
}

impl OptimizationTrace {
    pub fn final_energy(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |s| s.energy.total)
    }

    /// One JSON object per iteration.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for (i, step) in self.iterations.iter().enumerate() {
            let line = serde_json::json!({
                "seed": self.seed_index,
                "iteration": i,
                "move": step.applied,
                "energy": step.energy,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Energy the optimizer minimizes. Atomic boundaries use the untruncated
/// pair-kernel norm, since the truncated one ripples at scale `1/K` and traps
/// tip descent; the other modes use the truncated spectral norm.
pub fn energy(p: &IrrigationPattern, cfg: &OptimizerConfig) -> Result<EnergyBreakdown> {
    if cfg.boundary_mode != BoundaryMode::Atomic {
        return p.full_energy(cfg.s, cfg.boundary_mode, cfg.k);
    }
    if !(cfg.s > 0.5 && cfg.s < 1.0) {
        return Err(Error::DivergentBoundaryNorm(cfg.s));
    }
    let (per, kin) = p.internal_energy_of(0..p.edges().len(), 0.0, p.t_max());
    let atoms: Vec<(f64, f64)> = p.tips().iter().map(|t| (p.nodes()[t.node].x, p.tip_mass(t.node))).collect();
    let b = atomic_norm_sq(&atoms, cfg.s);
    let factor = if p.symmetric() { 2.0 } else { 1.0 };
    Ok(EnergyBreakdown::new(factor * per, factor * kin, factor * b, 0.0))
}

/// `||mu - 1||^2_{H^{-s}}` of an atomic probability-like measure, `1/2 < s < 1`,
/// summed in closed form over atom pairs.
pub fn atomic_norm_sq(atoms: &[(f64, f64)], s: f64) -> f64 {
    let a = 2.0 * s;
    let mut acc = 0.0;
    for (i, &(xi, mi)) in atoms.iter().enumerate() {
        acc += mi * mi * periodic_cos(a, 0.0);
        for &(xj, mj) in &atoms[..i] {
            acc += 2.0 * mi * mj * periodic_cos(a, xi - xj);
        }
    }
    2.0 * acc
}

/// Kinetic weight `m / dt` of every edge.
fn weights(p: &IrrigationPattern) -> Vec<f64> {
    p.edges()
        .iter()
        .map(|e| e.mass / (p.nodes()[e.to].t - p.nodes()[e.from].t))
        .collect()
}

fn is_tip(p: &IrrigationPattern, v: usize) -> bool {
    p.tip_at(v).is_some()
}

/// Minimizes the kinetic energy over non-tip positions with tips held fixed.
fn solve_interior(p: &IrrigationPattern, xs: &mut [f64]) {
    let w = weights(p);
    if p.is_forest() {
        solve_forest(p, &w, xs);
    } else {
        solve_cg(p, &w, xs);
    }
}

/// Leaf-to-root elimination: each free node's subtree reduces to `a x^2 - 2 b x`.
fn solve_forest(p: &IrrigationPattern, w: &[f64], xs: &mut [f64]) {
    let n = xs.len();
    let order = p.time_order();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    for &v in order.iter().rev() {
        if is_tip(p, v) {
            continue;
        }
        for &k in p.out_edges(v) {
            let c = p.edges()[k].to;
            if is_tip(p, c) {
                a[v] += w[k];
                b[v] += w[k] * xs[c];
            } else {
                let d = w[k] + a[c];
                a[v] += w[k] * a[c] / d;
                b[v] += w[k] * b[c] / d;
            }
        }
    }
    for &v in &order {
        if is_tip(p, v) {
            continue;
        }
        match p.in_edges(v).first() {
            None => {
                if a[v] > 0.0 {
                    xs[v] = b[v] / a[v];
                }
            }
            Some(&k) => {
                let u = p.edges()[k].from;
                xs[v] = (w[k] * xs[u] + b[v]) / (w[k] + a[v]);
            }
        }
    }
}

/// Conjugate gradients on the weighted graph Laplacian restricted to free nodes.
fn solve_cg(p: &IrrigationPattern, w: &[f64], xs: &mut [f64]) {
    let n = xs.len();
    let free: Vec<bool> = (0..n).map(|v| !is_tip(p, v)).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, e) in p.edges().iter().enumerate() {
            let d = x[e.from] - x[e.to];
            if free[e.from] {
                out[e.from] += w[k] * d;
            }
            if free[e.to] {
                out[e.to] -= w[k] * d;
            }
        }
    };
    let mut r = vec![0.0; n];
    apply(xs, &mut r);
    r.iter_mut().for_each(|v| *v = -*v);
    let mut d = r.clone();
    let mut ad = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let scale = rr.max(1e-300);
    for _ in 0..(4 * n).max(50) {
        if rr <= 1e-30 * scale {
            break;
        }
        let mut dm = d.clone();
        for (v, f) in free.iter().enumerate() {
            if !f {
                dm[v] = 0.0;
            }
        }
        apply(&dm, &mut ad);
        let dad: f64 = dm.iter().zip(&ad).map(|(a, b)| a * b).sum();
        if dad <= 0.0 {
            break;
        }
        let alpha = rr / dad;
        for v in 0..n {
            if free[v] {
                xs[v] += alpha * dm[v];
                r[v] -= alpha * ad[v];
            }
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for v in 0..n {
            d[v] = r[v] + beta * dm[v];
        }
        rr = rr_new;
    }
}

fn kinetic(p: &IrrigationPattern, xs: &[f64]) -> f64 {
    let w = weights(p);
    p.edges().iter().enumerate().map(|(k, e)| w[k] * (xs[e.to] - xs[e.from]).powi(2)).sum()
}

/// Truncated boundary norm as a function of tip positions, with its gradient.
pub struct BoundaryModel {
    exact: bool,
    s: f64,
    k_max: usize,
    masses: Vec<f64>,
    widths: Vec<Option<f64>>,
    damping: Option<Vec<f64>>,
}

impl BoundaryModel {
    pub fn new(p: &IrrigationPattern, s: f64, k_max: usize, mode: BoundaryMode) -> Result<Self> {
        // Validates the mode against the tip kinds.
        p.tip_measure(mode)?;
        let masses = p.tips().iter().map(|t| p.tip_mass(t.node)).collect();
        let widths = p
            .tips()
            .iter()
            .map(|t| match t.kind {
                TipKind::Block { width } => Some(width),
                TipKind::Atom => None,
            })
            .collect();
        let damping = match mode {
            BoundaryMode::Mollified { epsilon } => {
                let kern = Kernel::get();
                Some((0..=k_max).map(|k| kern.hat(k as f64 * epsilon)).collect())
            }
            _ => None,
        };
        Ok(Self { exact: mode == BoundaryMode::Atomic, s, k_max, masses, widths, damping })
    }

    fn shape(&self, j: usize, k: usize) -> f64 {
        let g = match self.widths[j] {
            Some(w) => {
                let arg = k as f64 * w;
                sin_pi(arg) / (std::f64::consts::PI * arg)
            }
            None => 1.0,
        };
        match &self.damping {
            Some(h) => g * h[k],
            None => g,
        }
    }

    /// The boundary norm and its gradient in the tip positions: untruncated for
    /// atoms, `sum_{0<|k|<=K} |k|^{-2s} |c_k|^2` otherwise.
    pub fn value_grad(&self, xs: &[f64]) -> (f64, Vec<f64>) {
        if self.exact {
            return self.pair_value_grad(xs);
        }
        let n = xs.len();
        let kk = self.k_max;
        let phases = |x: f64| -> Vec<Complex64> {
            let step = Complex64::from_polar(1.0, TAU * x.rem_euclid(1.0));
            let mut z = Complex64::new(1.0, 0.0);
            let mut out = Vec::with_capacity(kk + 1);
            for k in 0..=kk {
                if k % 64 == 0 {
                    z = Complex64::from_polar(1.0, TAU * (k as f64 * x.rem_euclid(1.0)).fract());
                }
                out.push(z);
                z *= step;
            }
            out
        };
        let ph: Vec<Vec<Complex64>> = xs.iter().map(|&x| phases(x)).collect();
        let mut c = vec![Complex64::new(0.0, 0.0); kk + 1];
        let mut shapes = vec![vec![0.0; kk + 1]; n];
        for j in 0..n {
            for k in 1..=kk {
                let g = self.masses[j] * self.shape(j, k);
                shapes[j][k] = g;
                c[k] += ph[j][k] * g;
            }
        }
        let wk: Vec<f64> = (0..=kk).map(|k| if k == 0 { 0.0 } else { (k as f64).powf(-2.0 * self.s) }).collect();
        let value = 2.0 * (1..=kk).map(|k| wk[k] * c[k].norm_sqr()).sum::<f64>();
        let grad = (0..n)
            .map(|j| {
                // d|c_k|^2/dx_j = 2 Re(conj(c_k) g 2 pi i k e^{2 pi i k x_j}).
                4.0 * (1..=kk)
                    .map(|k| {
                        let d = ph[j][k] * Complex64::new(0.0, TAU * k as f64) * shapes[j][k];
                        wk[k] * (c[k].conj() * d).re
                    })
                    .sum::<f64>()
            })
            .collect();
        (value, grad)
    }
}

impl BoundaryModel {
    fn pair_value_grad(&self, xs: &[f64]) -> (f64, Vec<f64>) {
        let (a, m) = (2.0 * self.s, &self.masses);
        let atoms: Vec<(f64, f64)> = xs.iter().copied().zip(m.iter().copied()).collect();
        let value = atomic_norm_sq(&atoms, self.s);
        let mut grad = vec![0.0; xs.len()];
        for j in 0..xs.len() {
            for i in 0..j {
                // G'(x) = -2 pi sum k^{1-a} sin(2 pi k x) is odd.
                let d = -TAU * periodic_sin(a - 1.0, xs[j] - xs[i]);
                grad[j] += 4.0 * m[i] * m[j] * d;
                grad[i] -= 4.0 * m[i] * m[j] * d;
            }
        }
        (value, grad)
    }
}

/// Tip positions must keep their order, and block tips must not overlap.
fn admissible(p: &IrrigationPattern, order: &[usize], xs: &[f64]) -> bool {
    order.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        let half = |v: usize| match p.tip_at(v).map(|t| t.kind) {
            Some(TipKind::Block { width }) => 0.5 * width,
            _ => 0.0,
        };
        xs[b] - xs[a] >= half(a) + half(b) - 1e-12
    })
}

/// Relaxes all positions at fixed topology and times; returns the new pattern.
pub fn relax_positions(p: &IrrigationPattern, cfg: &OptimizerConfig) -> Result<IrrigationPattern> {
    if cfg.boundary_mode == BoundaryMode::Atomic && cfg.s <= 0.5 {
        return Err(Error::DivergentBoundaryNorm(cfg.s));
    }
    let model = BoundaryModel::new(p, cfg.s, cfg.k, cfg.boundary_mode)?;
    let tip_nodes: Vec<usize> = p.tips().iter().map(|t| t.node).collect();
    let mut order = tip_nodes.clone();
    order.sort_by(|&a, &b| p.nodes()[a].x.total_cmp(&p.nodes()[b].x).then(a.cmp(&b)));
    let mut xs: Vec<f64> = p.nodes().iter().map(|n| n.x).collect();

    let objective = |xs: &mut Vec<f64>| -> (f64, Vec<f64>) {
        solve_interior(p, xs);
        let tx: Vec<f64> = tip_nodes.iter().map(|&v| xs[v]).collect();
        let (b, gb) = model.value_grad(&tx);
        let w = weights(p);
        let mut g = gb;
        for (j, &v) in tip_nodes.iter().enumerate() {
            for &k in p.in_edges(v) {
                let u = p.edges()[k].from;
                g[j] += 2.0 * w[k] * (xs[v] - xs[u]);
            }
        }
        (kinetic(p, xs) + b, g)
    };

    let (mut f, mut g) = objective(&mut xs);
    let gnorm = |g: &[f64]| g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut step = 1e-3 / gnorm(&g).max(1.0);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..cfg.max_inner_iters {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        // Gradients at roundoff level carry no descent information.
        if gnorm(&g) <= 1e-11 * (1.0 + f.abs()) {
            break;
        }
        let tx: Vec<f64> = tip_nodes.iter().map(|&v| xs[v]).collect();
        if let Some((px, pg)) = &prev {
            let sy: f64 = tx.iter().zip(px).zip(g.iter().zip(pg)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum();
            let ss: f64 = tx.iter().zip(px).map(|(a, b)| (a - b).powi(2)).sum();
            if sy > 0.0 {
                step = ss / sy;
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = xs.clone();
            for (j, &v) in tip_nodes.iter().enumerate() {
                trial[v] = xs[v] - step * g[j];
            }
            if admissible(p, &order, &trial) {
                let (ft, gt) = objective(&mut trial);
                if ft <= f - 1e-4 * step * gg {
                    prev = Some((tx.clone(), g.clone()));
                    let rel = (f - ft) / f.abs().max(1e-300);
                    xs = trial;
                    f = ft;
                    g = gt;
                    accepted = true;
                    if rel < cfg.position_tol {
                        return Ok(p.with_positions(&xs));
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    // Interior positions are exact for the final tips even without a tip step.
    solve_interior(p, &mut xs);
    Ok(p.with_positions(&xs))
}

/// Local energy of node `v` at time `t` with all else fixed, up to a constant.
fn local_energy(p: &IrrigationPattern, v: usize, t: f64) -> f64 {
    let x = p.nodes()[v].x;
    let mut e = 0.0;
    for &k in p.in_edges(v) {
        let ed = p.edges()[k];
        let u = p.nodes()[ed.from];
        let dt = t - u.t;
        e += dt + ed.mass * (x - u.x).powi(2) / dt;
    }
    for &k in p.out_edges(v) {
        let ed = p.edges()[k];
        let c = p.nodes()[ed.to];
        let dt = c.t - t;
        e += dt + ed.mass * (c.x - x).powi(2) / dt;
    }
    e
}

/// Derivative of [`local_energy`] in `t`; increasing since the energy is convex.
fn local_slope(p: &IrrigationPattern, v: usize, t: f64) -> f64 {
    let x = p.nodes()[v].x;
    let mut d = 0.0;
    for &k in p.in_edges(v) {
        let ed = p.edges()[k];
        let u = p.nodes()[ed.from];
        d += 1.0 - ed.mass * ((x - u.x) / (t - u.t)).powi(2);
    }
    for &k in p.out_edges(v) {
        let ed = p.edges()[k];
        let c = p.nodes()[ed.to];
        d -= 1.0 - ed.mass * ((c.x - x) / (c.t - t)).powi(2);
    }
    d
}

/// Golden-section search leaves the minimizer uncertain at the square root of
/// machine precision; bisecting the exact slope nearby recovers full accuracy.
fn polish(p: &IrrigationPattern, v: usize, t: f64, lo: f64, hi: f64) -> f64 {
    let w = 1e-6 * (hi - lo);
    let (mut a, mut b) = ((t - w).max(lo), (t + w).min(hi));
    if local_slope(p, v, a) > 0.0 || local_slope(p, v, b) < 0.0 {
        return t;
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if local_slope(p, v, m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = tol.max(4.0 * f64::EPSILON * a.abs().max(b.abs()));
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Moves every interior node to its locally optimal time, sweeping until the
/// times settle. Roots and tips keep their times.
pub fn retime_nodes(p: &IrrigationPattern, cfg: &OptimizerConfig) -> Result<IrrigationPattern> {
    let _ = cfg;
    let mut q = p.clone();
    for _ in 0..50 {
        let mut moved: f64 = 0.0;
        for v in q.time_order() {
            if q.in_edges(v).is_empty() || q.out_edges(v).is_empty() {
                continue;
            }
            let lo = q.in_edges(v).iter().map(|&k| q.nodes()[q.edges()[k].from].t).fold(f64::NEG_INFINITY, f64::max);
            let hi = q.out_edges(v).iter().map(|&k| q.nodes()[q.edges()[k].to].t).fold(f64::INFINITY, f64::min);
            let gap = hi - lo;
            let margin = (1e-9 * gap).max(4.0 * TIME_TOL);
            if gap <= 2.0 * margin {
                continue;
            }
            let t_old = q.nodes()[v].t;
            let (a, b) = (lo + margin, hi - margin);
            let t_new = golden(|t| local_energy(&q, v, t), a, b, 1e-12 * gap);
            let t_new = polish(&q, v, t_new, a, b);
            if local_energy(&q, v, t_new) < local_energy(&q, v, t_old) {
                let mut ts: Vec<f64> = q.nodes().iter().map(|n| n.t).collect();
                ts[v] = t_new;
                moved = moved.max((t_new - t_old).abs() / gap);
                q = q.with_times(&ts);
            }
        }
        if moved < 1e-10 {
            break;
        }
    }
    Ok(q)
}

/// Alternates position and time relaxation until the energy settles.
fn relax(p: &IrrigationPattern, cfg: &OptimizerConfig) -> Result<(IrrigationPattern, EnergyBreakdown)> {
    let mut cur = p.clone();
    let mut e = energy(&cur, cfg)?;
    for _ in 0..cfg.max_inner_iters {
        let mut next = relax_positions(&cur, cfg)?;
        if cfg.topology_moves.contains(&Move::RetimeNode) {
            next = retime_nodes(&next, cfg)?;
        }
        let en = energy(&next, cfg)?;
        if en.total >= e.total {
            break;
        }
        let rel = (e.total - en.total) / e.total.abs().max(1e-300);
        cur = next;
        e = en;
        if rel < cfg.position_tol {
            break;
        }
    }
    Ok((cur, e))
}

fn rebuild(p: &IrrigationPattern, b: PatternBuilder) -> Result<IrrigationPattern> {
    Ok(IrrigationPattern::new(p.t_max(), b.nodes, b.edges, b.tips, p.symmetric(), p.origin())?)
}

#[derive(Debug, Clone, Copy)]
enum Merge {
    /// Two out-edges of one node.
    Children(usize, usize, usize),
    /// Two roots, joined under a new common root.
    Roots(usize, usize),
}

/// Position-adjacent children of each node, then position-adjacent roots.
fn merge_candidates(p: &IrrigationPattern) -> Vec<Merge> {
    let x_of = |v: usize| p.nodes()[v].x;
    let mut out = Vec::new();
    for v in 0..p.nodes().len() {
        let mut kids: Vec<usize> = p.out_edges(v).to_vec();
        kids.sort_by(|&a, &b| x_of(p.edges()[a].to).total_cmp(&x_of(p.edges()[b].to)));
        out.extend(kids.windows(2).map(|w| Merge::Children(v, w[0], w[1])));
    }
    let mut roots: Vec<usize> = p.roots().into_iter().filter(|&r| !p.out_edges(r).is_empty()).collect();
    roots.sort_by(|&a, &b| x_of(a).total_cmp(&x_of(b)));
    out.extend(roots.windows(2).map(|w| Merge::Roots(w[0], w[1])));
    out
}

/// Drops nodes left without edges or tips and renumbers the rest.
fn compact(p: &IrrigationPattern, b: PatternBuilder) -> Result<IrrigationPattern> {
    let n = b.nodes.len();
    let mut used = vec![false; n];
    for e in &b.edges {
        used[e.from] = true;
        used[e.to] = true;
    }
    for t in &b.tips {
        used[t.node] = true;
    }
    let mut out = PatternBuilder::new();
    let mut map = vec![usize::MAX; n];
    for (v, nd) in b.nodes.iter().enumerate() {
        if used[v] {
            map[v] = out.node(nd.t, nd.x);
        }
    }
    for e in &b.edges {
        out.edge(map[e.from], map[e.to], e.mass);
    }
    for t in &b.tips {
        out.tip(map[t.node], t.kind);
    }
    rebuild(p, out)
}

fn apply_merge(p: &IrrigationPattern, mv: Merge) -> Result<IrrigationPattern> {
    let mut b = p.to_builder();
    match mv {
        Merge::Children(v, k1, k2) => {
            let (e1, e2) = (b.edges[k1], b.edges[k2]);
            let (c1, c2) = (b.nodes[e1.to], b.nodes[e2.to]);
            let m = e1.mass + e2.mass;
            let t_branch = 0.5 * (b.nodes[v].t + c1.t.min(c2.t));
            let n = b.node(t_branch, (e1.mass * c1.x + e2.mass * c2.x) / m);
            b.edges[k1].from = n;
            b.edges[k2].from = n;
            b.edge(v, n, m);
            rebuild(p, b)
        }
        Merge::Roots(r1, r2) => {
            let (m1, m2) = (p.throughput(r1), p.throughput(r2));
            let x = (m1 * b.nodes[r1].x + m2 * b.nodes[r2].x) / (m1 + m2);
            let first = p.out_edges(r1).iter().chain(p.out_edges(r2)).map(|&k| b.nodes[b.edges[k].to].t);
            let t_branch = 0.5 * first.fold(f64::INFINITY, f64::min);
            let root = b.node(b.nodes[r1].t.min(b.nodes[r2].t), x);
            let n = b.node(t_branch, x);
            for e in b.edges.iter_mut() {
                if e.from == r1 || e.from == r2 {
                    e.from = n;
                }
            }
            b.edge(root, n, m1 + m2);
            compact(p, b)
        }
    }
}

fn split_candidates(p: &IrrigationPattern) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..p.edges().len()).filter(|&k| is_tip(p, p.edges()[k].to)).collect();
    // Heaviest tips first: splitting them lowers the boundary term the most.
    ks.sort_by(|&a, &b| p.edges()[b].mass.total_cmp(&p.edges()[a].mass).then(a.cmp(&b)));
    ks
}

fn apply_split(p: &IrrigationPattern, k: usize) -> Result<IrrigationPattern> {
    let mut b = p.to_builder();
    let e = b.edges[k];
    let (u, c) = (b.nodes[e.from], b.nodes[e.to]);
    let tip_idx = b.tips.iter().position(|t| t.node == e.to).expect("tip edge");
    let kind = b.tips[tip_idx].kind;
    let (h, kinds) = match kind {
        TipKind::Atom => (1e-3_f64.min(0.25 / p.tips().len() as f64), [TipKind::Atom; 2]),
        TipKind::Block { width } => (0.25 * width, [TipKind::Block { width: 0.5 * width }; 2]),
    };
    let mid = b.node(0.5 * (u.t + c.t), 0.5 * (u.x + c.x));
    b.edges[k] = crate::pattern::Edge { from: e.from, to: mid, mass: e.mass };
    b.nodes[e.to].x = c.x - h;
    b.tips[tip_idx].kind = kinds[0];
    b.edge(mid, e.to, 0.5 * e.mass);
    let twin = b.node(c.t, c.x + h);
    b.edge(mid, twin, 0.5 * e.mass);
    b.tip(twin, kinds[1]);
    rebuild(p, b)
}

fn apply_prune(p: &IrrigationPattern) -> Result<Option<IrrigationPattern>> {
    let floor = 1e-14 * p.total_mass();
    // Retiming keeps nodes a few time tolerances apart, so this catches nodes pinned there.
    let short = (1e-9 * p.t_max()).max(16.0 * TIME_TOL);
    // An edge whose head has collapsed onto its tail: the head's children move up.
    let collapsed = (0..p.edges().len()).find(|&k| {
        let e = p.edges()[k];
        p.nodes()[e.to].t - p.nodes()[e.from].t <= short && !is_tip(p, e.to) && p.in_edges(e.to).len() == 1
    });
    if p.edges().iter().all(|e| e.mass > floor) && collapsed.is_none() {
        return Ok(None);
    }
    let mut b = p.to_builder();
    if let Some(k) = collapsed {
        let (from, to) = (b.edges[k].from, b.edges[k].to);
        for e in b.edges.iter_mut() {
            if e.from == to {
                e.from = from;
            }
        }
        b.edges.remove(k);
    }
    b.edges.retain(|e| e.mass > floor);
    let fed: Vec<usize> = b.edges.iter().map(|e| e.to).collect();
    b.tips.retain(|t| fed.contains(&t.node));
    let q = compact(p, b)?;
    Ok(Some(apply_prune(&q)?.unwrap_or(q)))
}

/// Structure a candidate must keep to be accepted.
fn structurally_sound(p: &IrrigationPattern) -> bool {
    use crate::validate::Check;
    let cfg = ValidationConfig { checks: vec![Check::NoLoop, Check::MonotoneCoupling], ..ValidationConfig::default() };
    validate(p, &cfg).all_passed()
}

fn jitter(p: &IrrigationPattern, amp: f64, seed: u64) -> IrrigationPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = p.nodes().iter().map(|n| n.x).collect();
    for t in p.tips() {
        xs[t.node] += amp * (2.0 * rng.gen::<f64>() - 1.0);
    }
    let q = p.with_positions(&xs);
    if structurally_sound(&q) {
        q
    } else {
        p.clone()
    }
}

/// Optimizes one seed pattern.
pub fn optimize_pattern(seed: &IrrigationPattern, cfg: &OptimizerConfig, seed_index: usize) -> Result<OptimizationTrace> {
    cfg.check()?;
    let clock = Instant::now();
    let mut iterations = Vec::new();
    let start = if cfg.perturb > 0.0 {
        jitter(seed, cfg.perturb, cfg.rng_seed.wrapping_add(seed_index as u64))
    } else {
        seed.clone()
    };
    let e0 = energy(seed, cfg)?;
    iterations.push(TraceStep { energy: e0, applied: "seed".into() });
    let mut cur = seed.clone();
    let mut e = e0;
    let (relaxed, er) = relax(&start, cfg)?;
    if er.total < e.total && structurally_sound(&relaxed) {
        cur = relaxed;
        e = er;
        iterations.push(TraceStep { energy: e, applied: "relax".into() });
    }
    let quick = OptimizerConfig { max_inner_iters: SCREEN_ITERS, ..cfg.clone() };
    let gain = |old: f64, new: f64| (old - new) > cfg.position_tol * old.abs();
    let mut converged = false;
    for _ in 0..cfg.max_outer_iters {
        let mut improved = false;
        for &mv in &cfg.topology_moves {
            let candidates: Vec<IrrigationPattern> = match mv {
                Move::MergeSiblings => merge_candidates(&cur)
                    .into_iter()
                    .take(cfg.max_candidates)
                    .filter_map(|c| apply_merge(&cur, c).ok())
                    .collect(),
                Move::SplitEdge => split_candidates(&cur)
                    .into_iter()
                    .take(cfg.max_candidates)
                    .filter_map(|k| apply_split(&cur, k).ok())
                    .collect(),
                Move::RetimeNode => vec![retime_nodes(&cur, cfg)?],
                Move::PruneZero => apply_prune(&cur)?.into_iter().collect(),
            };
            // Screen every candidate with a short relaxation, then finish the most promising.
            let mut screened: Vec<(IrrigationPattern, EnergyBreakdown)> = candidates
                .into_iter()
                .filter(structurally_sound)
                .filter_map(|c| relax(&c, &quick).ok())
                .collect();
            screened.sort_by(|a, b| a.1.total.total_cmp(&b.1.total));
            let mut best: Option<(IrrigationPattern, EnergyBreakdown)> = None;
            for (cand, _) in screened.into_iter().take(SCREEN_KEEP) {
                let Ok((q, eq)) = relax(&cand, cfg) else { continue };
                if !structurally_sound(&q) {
                    continue;
                }
                // Pruning only simplifies, so it needs no strict gain.
                let enough = if mv == Move::PruneZero { eq.total <= e.total } else { gain(e.total, eq.total) };
                if enough && best.as_ref().is_none_or(|b| eq.total < b.1.total) {
                    best = Some((q, eq));
                }
            }
            if let Some((q, eq)) = best {
                cur = q;
                e = eq;
                improved = true;
                let name = serde_json::to_value(mv)?.as_str().unwrap_or("move").to_string();
                iterations.push(TraceStep { energy: e, applied: name });
            }
        }
        if !improved {
            converged = true;
            break;
        }
    }
    let validation = validate(&cur, &ValidationConfig::for_optimized());
    Ok(OptimizationTrace {
        seed_index,
        iterations,
        equipartition_residual: equipartition_residual(&cur),
        pattern: cur,
        validation,
        converged,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Optimizes every seed in parallel and returns the lowest final energy, ties
/// going to the earlier seed.
pub fn topology_search(cfg: &OptimizerConfig) -> Result<OptimizationTrace> {
    if cfg.restarts.is_empty() {
        return Err(Error::NoSeeds);
    }
    cfg.check()?;
    let traces: Vec<Result<OptimizationTrace>> = cfg
        .restarts
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let seed = spec.with_height(cfg.t).build(cfg.s)?.pattern;
            optimize_pattern(&seed, cfg, i)
        })
        .collect();
    let mut best: Option<OptimizationTrace> = None;
    for tr in traces {
        let tr = tr?;
        if best.as_ref().is_none_or(|b| tr.final_energy() < b.final_energy()) {
            best = Some(tr);
        }
    }
    best.ok_or(Error::NoSeeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::dirac_grid;

    fn off_center_v() -> IrrigationPattern {
        let mut b = PatternBuilder::new();
        let r = b.node(0.0, 0.45);
        let l = b.node(1.0, 0.4);
        let h = b.node(1.0, 0.6);
        b.edge(r, l, 0.5);
        b.edge(r, h, 0.5);
        b.tip(l, TipKind::Atom);
        b.tip(h, TipKind::Atom);
        b.build(1.0, true).unwrap()
    }

    #[test]
    fn root_moves_to_tip_barycenter() {
        let p = off_center_v();
        let mut xs: Vec<f64> = p.nodes().iter().map(|n| n.x).collect();
        let before = kinetic(&p, &xs);
        solve_interior(&p, &mut xs);
        assert!((xs[0] - 0.5).abs() < 1e-15);
        assert!(kinetic(&p, &xs) < before);
        let mut ys: Vec<f64> = p.nodes().iter().map(|n| n.x).collect();
        let w = weights(&p);
        solve_cg(&p, &w, &mut ys);
        assert!((ys[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_gradient_matches_differences() {
        let p = dirac_grid(3, 0.5).unwrap();
        let model = BoundaryModel::new(&p, 0.75, 256, BoundaryMode::Atomic).unwrap();
        let xs = [0.1, 0.37, 0.81];
        let (_, g) = model.value_grad(&xs);
        for j in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (xs, xs);
            a[j] += h;
            b[j] -= h;
            let fd = (model.value_grad(&a).0 - model.value_grad(&b).0) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-8), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn block_gradient_matches_differences() {
        let p = crate::constructions::uniform_grid(3, 0.1, 0.5, 2).unwrap();
        let model = BoundaryModel::new(&p, 0.4, 512, BoundaryMode::Block).unwrap();
        let xs: Vec<f64> = (0..p.tips().len()).map(|j| 0.05 + 0.077 * j as f64).collect();
        let (_, g) = model.value_grad(&xs);
        for j in 0..xs.len() {
            let h = 1e-6;
            let (mut a, mut b) = (xs.clone(), xs.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (model.value_grad(&a).0 - model.value_grad(&b).0) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-6), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn pair_norm_matches_spectral_sum() {
        // Equispaced atoms: only multiples of N survive, giving 2 zeta(2s) N^{-2s}.
        let atoms: Vec<(f64, f64)> = (0..5).map(|i| ((i as f64 + 0.5) / 5.0, 0.2)).collect();
        let want = 2.0 * crate::series::zeta(1.5) * 5f64.powf(-1.5);
        assert!((atomic_norm_sq(&atoms, 0.75) - want).abs() < 1e-12);
        let uneven = [(0.1, 0.5), (0.17, 0.3), (0.6, 0.2)];
        let mu = crate::measure::AtomicMeasure::canonicalize(&uneven).unwrap().into();
        let rep = crate::spectral::hs_norm_sq(&crate::spectral::spectrum_of(&mu, 4096, true), 0.8).unwrap();
        assert!((atomic_norm_sq(&uneven, 0.8) - rep.value).abs() <= rep.tail);
    }

    #[test]
    fn static_dirac_grid_is_a_fixed_point() {
        let p = dirac_grid(4, 0.1).unwrap();
        let cfg = OptimizerConfig::new(0.75, 0.1, BoundaryMode::Atomic);
        let q = relax_positions(&p, &cfg).unwrap();
        for (a, b) in p.nodes().iter().zip(q.nodes()) {
            assert!((a.x - b.x).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbed_dirac_grid_returns_to_equispaced() {
        let p = dirac_grid(4, 0.1).unwrap();
        let mut xs: Vec<f64> = p.nodes().iter().map(|n| n.x).collect();
        let tip = p.tips()[1].node;
        xs[tip] += 0.01;
        let q = p.with_positions(&xs);
        let mut cfg = OptimizerConfig::new(0.75, 0.1, BoundaryMode::Atomic);
        cfg.k = 512;
        cfg.max_inner_iters = 500;
        cfg.position_tol = 1e-16;
        let r = relax_positions(&q, &cfg).unwrap();
        let mut tips: Vec<f64> = r.tips().iter().map(|t| r.nodes()[t.node].x).collect();
        tips.sort_by(f64::total_cmp);
        let shift = tips[0] - 0.125;
        for (i, x) in tips.iter().enumerate() {
            assert!((x - shift - (i as f64 + 0.5) / 4.0).abs() < 1e-6, "{tips:?}");
        }
    }

    #[test]
    fn retime_single_node_matches_stationary_point() {
        // One branch point between a root at (0, 0.5) and two tips at T = 1.
        let mut b = PatternBuilder::new();
        let r = b.node(0.0, 0.5);
        let n = b.node(0.3, 0.5);
        let l = b.node(1.0, 0.3);
        let h = b.node(1.0, 0.7);
        b.edge(r, n, 1.0);
        b.edge(n, l, 0.5);
        b.edge(n, h, 0.5);
        b.tip(l, TipKind::Atom);
        b.tip(h, TipKind::Atom);
        let p = b.build(1.0, true).unwrap();
        let cfg = OptimizerConfig::new(0.75, 1.0, BoundaryMode::Atomic);
        let q = retime_nodes(&p, &cfg).unwrap();
        // d/dt [t + 2 (1 - t) + 2 * 0.5 * 0.04 / (1 - t)] = 0 gives (1 - t)^2 = 0.04.
        assert!((q.nodes()[1].t - 0.8).abs() < 1e-9, "{}", q.nodes()[1].t);
        let prof = crate::validate::lambda_profile(&q);
        assert!((prof[0].2 - prof[1].2).abs() < 1e-8);
    }

    #[test]
    fn no_seeds_is_an_error() {
        let cfg = OptimizerConfig::new(0.75, 1.0, BoundaryMode::Atomic);
        assert!(matches!(topology_search(&cfg), Err(Error::NoSeeds)));
    }
}
