//! Structural checks on irrigation patterns, each reported with a witness.

use serde::{Deserialize, Serialize};

use crate::pattern::{IrrigationPattern, TipKind, TIME_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    NoLoop,
    MonotoneCoupling,
    Cone,
    Barycenter,
    ThreeIntervals,
    Equipartition,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::NoLoop,
        Check::MonotoneCoupling,
        Check::Cone,
        Check::Barycenter,
        Check::ThreeIntervals,
        Check::Equipartition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::NoLoop => "no_loop",
            Check::MonotoneCoupling => "monotone_coupling",
            Check::Cone => "cone",
            Check::Barycenter => "barycenter",
            Check::ThreeIntervals => "three_intervals",
            Check::Equipartition => "equipartition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub checks: Vec<Check>,
    /// Absolute position slack for the cone check.
    pub cone_tol: f64,
    /// `None` makes the barycenter check report-only.
    pub barycenter_tol: Option<f64>,
    /// Allowed equipartition residual as a fraction of `I / T`; `None` is report-only.
    pub equipartition_tol: Option<f64>,
    /// Test intervals at `t = T`; empty means dyadic subdivisions of the tip hull.
    pub intervals: Vec<(f64, f64)>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            checks: Check::ALL.to_vec(),
            cone_tol: 1e-9,
            barycenter_tol: Some(1e-8),
            equipartition_tol: None,
            intervals: Vec::new(),
        }
    }
}

impl ValidationConfig {
    /// Structural checks only, with the quantitative ones reported but not enforced.
    pub fn for_constructions() -> Self {
        Self { barycenter_tol: None, equipartition_tol: None, ..Self::default() }
    }

    /// Tolerances for locally optimized patterns.
    pub fn for_optimized() -> Self {
        Self {
            cone_tol: 1e-6,
            barycenter_tol: Some(1e-6),
            equipartition_tol: Some(0.05),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    /// Report-only checks always pass; `value` still carries the measurement.
    pub report_only: bool,
    pub value: Option<f64>,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub results: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, c: Check) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.check == c)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }
}

pub fn validate(p: &IrrigationPattern, cfg: &ValidationConfig) -> ValidationReport {
    let results = cfg
        .checks
        .iter()
        .map(|&c| match c {
            Check::NoLoop => no_loop(p),
            Check::MonotoneCoupling => monotone_coupling(p),
            Check::Cone => cone(p, cfg.cone_tol),
            Check::Barycenter => barycenter(p, cfg.barycenter_tol),
            Check::ThreeIntervals => three_intervals(p, &cfg.intervals),
            Check::Equipartition => equipartition(p, cfg.equipartition_tol),
        })
        .collect();
    ValidationReport { results }
}

fn result(check: Check, witness: Option<String>, value: Option<f64>) -> CheckResult {
    CheckResult { check, passed: witness.is_none(), report_only: false, value, witness }
}

/// Consecutive distinct node times as `(t0, t1)` intervals.
fn elementary_intervals(p: &IrrigationPattern) -> Vec<(f64, f64)> {
    let ts = p.node_times();
    ts.windows(2).filter(|w| w[1] - w[0] > TIME_TOL).map(|w| (w[0], w[1])).collect()
}

/// Edges whose time span covers `(t0, t1)`.
fn spanning(p: &IrrigationPattern, t0: f64, t1: f64) -> Vec<usize> {
    let mid = 0.5 * (t0 + t1);
    (0..p.edges().len())
        .filter(|&k| {
            let e = p.edges()[k];
            p.nodes()[e.from].t <= mid && p.nodes()[e.to].t >= mid
        })
        .collect()
}

/// Node of edge `k` sitting at time `t`, if any.
fn node_at(p: &IrrigationPattern, k: usize, t: f64) -> Option<usize> {
    let e = p.edges()[k];
    if (p.nodes()[e.from].t - t).abs() <= TIME_TOL {
        Some(e.from)
    } else if (p.nodes()[e.to].t - t).abs() <= TIME_TOL {
        Some(e.to)
    } else {
        None
    }
}

fn no_loop(p: &IrrigationPattern) -> CheckResult {
    for v in 0..p.nodes().len() {
        if p.in_edges(v).len() > 1 {
            return result(
                Check::NoLoop,
                Some(format!("node {v} is reached by {} edges", p.in_edges(v).len())),
                None,
            );
        }
    }
    // Distinct tracks may only meet at a shared node.
    for (t0, t1) in elementary_intervals(p) {
        let live = spanning(p, t0, t1);
        for &t in &[t0, t1] {
            let mut at: Vec<(f64, usize)> = live.iter().map(|&k| (p.edge_position(k, t), k)).collect();
            at.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in at.windows(2) {
                let ((xa, a), (xb, b)) = (w[0], w[1]);
                if (xb - xa).abs() <= 1e-12 {
                    let shared = node_at(p, a, t).is_some() && node_at(p, a, t) == node_at(p, b, t);
                    if !shared {
                        return result(
                            Check::NoLoop,
                            Some(format!("edges {a} and {b} meet at x = {xa} at t = {t}")),
                            None,
                        );
                    }
                }
            }
        }
        let start = |k: usize| p.edge_position(k, t0);
        let end = |k: usize| p.edge_position(k, t1);
        let mut order = live.clone();
        order.sort_by(|&a, &b| start(a).total_cmp(&start(b)).then(end(a).total_cmp(&end(b))));
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            if end(a) > end(b) + 1e-12 {
                return result(
                    Check::NoLoop,
                    Some(format!("edges {a} and {b} cross in ({t0}, {t1})")),
                    None,
                );
            }
        }
    }
    // Block tips must not overlap.
    let mut blocks: Vec<(f64, f64, usize)> = p
        .tips()
        .iter()
        .filter_map(|t| match t.kind {
            TipKind::Block { width } => {
                let x = p.nodes()[t.node].x;
                Some((x - 0.5 * width, x + 0.5 * width, t.node))
            }
            TipKind::Atom => None,
        })
        .collect();
    blocks.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in blocks.windows(2) {
        if w[1].0 < w[0].1 - 1e-12 {
            return result(
                Check::NoLoop,
                Some(format!("block tips at nodes {} and {} overlap", w[0].2, w[1].2)),
                None,
            );
        }
    }
    result(Check::NoLoop, None, None)
}

fn monotone_coupling(p: &IrrigationPattern) -> CheckResult {
    let hull = p.tip_hulls();
    let mut worst: f64 = 0.0;
    for (t0, t1) in elementary_intervals(p) {
        let live = spanning(p, t0, t1);
        for &t in &[t0, 0.5 * (t0 + t1)] {
            let mut at: Vec<(f64, f64, f64, usize)> = live
                .iter()
                .map(|&k| {
                    let h = hull[p.edges()[k].to];
                    (p.edge_position(k, t), h.0, h.1, k)
                })
                .collect();
            at.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for w in at.windows(2) {
                let (a, b) = (w[0], w[1]);
                // Coincident tracks share their position, so only their tips can be ordered.
                let overlap = a.2 - b.1;
                worst = worst.max(overlap);
                if overlap > 1e-9 {
                    return result(
                        Check::MonotoneCoupling,
                        Some(format!(
                            "edges {} and {} at t = {t}: positions {} <= {} but tips reach {} > {}",
                            a.3, b.3, a.0, b.0, a.2, b.1
                        )),
                        Some(overlap),
                    );
                }
            }
        }
    }
    result(Check::MonotoneCoupling, None, Some(worst))
}

fn cone(p: &IrrigationPattern, tol: f64) -> CheckResult {
    let hull = p.tip_hulls();
    let t_max = p.t_max();
    let mut worst: f64 = 0.0;
    let order = p.time_order();
    for &v in &order {
        let apex = p.nodes()[v];
        if t_max - apex.t <= TIME_TOL {
            continue;
        }
        let (lo, hi) = hull[v];
        let mut stack: Vec<usize> = p.out_edges(v).iter().map(|&k| p.edges()[k].to).collect();
        let mut seen = std::collections::HashSet::new();
        while let Some(w) = stack.pop() {
            if !seen.insert(w) {
                continue;
            }
            let nd = p.nodes()[w];
            let f = (nd.t - apex.t) / (t_max - apex.t);
            let left = apex.x + (lo - apex.x) * f;
            let right = apex.x + (hi - apex.x) * f;
            let excess = (left - nd.x).max(nd.x - right);
            worst = worst.max(excess);
            if excess > tol {
                return result(
                    Check::Cone,
                    Some(format!(
                        "node {w} at ({}, {}) leaves the cone of node {v} by {excess}",
                        nd.t, nd.x
                    )),
                    Some(excess),
                );
            }
            stack.extend(p.out_edges(w).iter().map(|&k| p.edges()[k].to));
        }
    }
    result(Check::Cone, None, Some(worst.max(0.0)))
}

/// Mass each node sends into every leaf, as `(leaf, mass)` lists, splitting
/// proportionally where flows merge.
fn tip_shares(p: &IrrigationPattern) -> Vec<Vec<(usize, f64)>> {
    let n = p.nodes().len();
    let mut shares: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for v in p.time_order().into_iter().rev() {
        if p.tip_at(v).is_some() {
            shares[v] = vec![(v, p.tip_mass(v))];
            continue;
        }
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for &k in p.out_edges(v) {
            let e = p.edges()[k];
            let child_through = p.throughput(e.to);
            for &(leaf, m) in &shares[e.to] {
                acc.push((leaf, m * e.mass / child_through));
            }
        }
        acc.sort_by_key(|a| a.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (leaf, m) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == leaf => last.1 += m,
                _ => merged.push((leaf, m)),
            }
        }
        shares[v] = merged;
    }
    shares
}

fn barycenter(p: &IrrigationPattern, tol: Option<f64>) -> CheckResult {
    let shares = tip_shares(p);
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for r in p.roots() {
        let m: f64 = shares[r].iter().map(|a| a.1).sum();
        let bary = shares[r].iter().map(|&(leaf, w)| w * p.nodes()[leaf].x).sum::<f64>() / m;
        let dev = (p.nodes()[r].x - bary).abs();
        if dev > worst {
            worst = dev;
            witness = Some(format!("root {r} at {} but tips balance at {bary}", p.nodes()[r].x));
        }
    }
    match tol {
        Some(tol) => result(Check::Barycenter, witness.filter(|_| worst > tol), Some(worst)),
        None => CheckResult { check: Check::Barycenter, passed: true, report_only: true, value: Some(worst), witness },
    }
}

fn default_intervals(p: &IrrigationPattern) -> Vec<(f64, f64)> {
    let Some((lo, hi)) = p.tips_line().hull() else { return Vec::new() };
    if hi - lo <= 0.0 {
        return vec![(lo - 0.5, hi + 0.5)];
    }
    let mut out = Vec::new();
    for m in [2usize, 4, 8, 16] {
        let h = (hi - lo) / m as f64;
        out.extend((0..m).map(|i| (lo + i as f64 * h, lo + (i + 1) as f64 * h)));
    }
    out
}

fn three_intervals(p: &IrrigationPattern, intervals: &[(f64, f64)]) -> CheckResult {
    let intervals = if intervals.is_empty() { default_intervals(p) } else { intervals.to_vec() };
    let n = p.nodes().len();
    let order = p.time_order();
    let mut worst = 0usize;
    for &(a, b) in &intervals {
        let len = b - a;
        // Mass of each node's flow that lands in [a, b].
        let mut into = vec![0.0; n];
        for &v in order.iter().rev() {
            if let Some(tip) = p.tip_at(v) {
                let x = p.nodes()[v].x;
                let m = p.tip_mass(v);
                into[v] = match tip.kind {
                    TipKind::Atom => {
                        if x >= a && x <= b {
                            m
                        } else {
                            0.0
                        }
                    }
                    TipKind::Block { width } => {
                        let (l, r) = (x - 0.5 * width, x + 0.5 * width);
                        m * ((r.min(b) - l.max(a)).max(0.0) / width)
                    }
                };
                continue;
            }
            into[v] = p
                .out_edges(v)
                .iter()
                .map(|&k| {
                    let e = p.edges()[k];
                    into[e.to] * e.mass / p.throughput(e.to)
                })
                .sum();
        }
        for t in p.node_times() {
            if t >= p.t_max() - TIME_TOL {
                continue;
            }
            let mut xs: Vec<f64> = p
                .live_edges(t)
                .into_iter()
                .filter(|&k| {
                    let e = p.edges()[k];
                    into[e.to] * e.mass / p.throughput(e.to) > 1e-15
                })
                .map(|k| p.edge_position(k, t))
                .collect();
            xs.sort_by(f64::total_cmp);
            let mut count = 0;
            let mut i = 0;
            while i < xs.len() {
                count += 1;
                let start = xs[i];
                while i < xs.len() && xs[i] <= start + len + 1e-12 {
                    i += 1;
                }
            }
            worst = worst.max(count);
            if count > 3 {
                return result(
                    Check::ThreeIntervals,
                    Some(format!("interval [{a}, {b}] needs {count} pieces at t = {t}")),
                    Some(count as f64),
                );
            }
        }
    }
    result(Check::ThreeIntervals, None, Some(worst as f64))
}

/// Piecewise values of `P' - E_kin'` on elementary intervals.
pub fn lambda_profile(p: &IrrigationPattern) -> Vec<(f64, f64, f64)> {
    elementary_intervals(p)
        .into_iter()
        .map(|(t0, t1)| {
            let lam: f64 = spanning(p, t0, t1)
                .into_iter()
                .map(|k| {
                    let v = p.edge_velocity(k);
                    1.0 - p.edges()[k].mass * v * v
                })
                .sum();
            (t0, t1, lam)
        })
        .collect()
}

/// `max |Lambda - mean Lambda|` in units of `I / T`.
pub fn equipartition_residual(p: &IrrigationPattern) -> f64 {
    let prof = lambda_profile(p);
    let t = p.t_max();
    let (pp, kin) = p.internal_energy_of(0..p.edges().len(), 0.0, t);
    let mean = (pp - kin) / t;
    let dev = prof.iter().map(|x| (x.2 - mean).abs()).fold(0.0, f64::max);
    let scale = (pp + kin) / t;
    if scale == 0.0 {
        0.0
    } else {
        dev / scale
    }
}

fn equipartition(p: &IrrigationPattern, tol: Option<f64>) -> CheckResult {
    let r = equipartition_residual(p);
    match tol {
        Some(tol) if r > tol => result(
            Check::Equipartition,
            Some(format!("Lambda deviates from its mean by {r} of I/T")),
            Some(r),
        ),
        Some(_) => result(Check::Equipartition, None, Some(r)),
        None => CheckResult { check: Check::Equipartition, passed: true, report_only: true, value: Some(r), witness: None },
    }
}
