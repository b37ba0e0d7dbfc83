//! Dyadic transport fragments between a source and a target supported in
//! small boxes.
//!
//! The fragment lives on `[t0, t0 + eps]`. Its midpoint node sits halfway
//! between the box centers. Towards the target, level `k` of the tree sits at
//! `tau_k = t0 + eps (1 - delta^k / 2)` with one node per nonempty cell among the
//! `2^k` equal cells of the target box, placed at the cell center of the box
//! contracted towards the source center by the McCann weight
//! `lambda_k = 1 - delta^k / 2`. Consecutive levels nest, so the target half is a
//! splitting tree. The source half mirrors it with merging levels at
//! `t0 + eps delta^k / 2`; a single source atom needs no merging and is joined to
//! the midpoint by one straight edge.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::line::{LineMeasure, Piece};
use crate::pattern::{IrrigationPattern, PatternBuilder, TipKind};

/// Cells narrower than this are not subdivided further.
pub const MIN_CELL_WIDTH: f64 = 1e-6;
pub const DEFAULT_DELTA: f64 = 0.4;
pub const DEFAULT_DEPTH: usize = 10;

/// Masses below this fraction of the fragment mass are treated as empty cells.
const EMPTY: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentParams {
    pub t0: f64,
    pub eps: f64,
    pub delta: f64,
    pub depth: usize,
}

impl FragmentParams {
    pub fn new(t0: f64, eps: f64, delta: f64, depth: usize) -> Result<Self> {
        if !(delta > 0.25 && delta < 0.5) {
            return Err(Error::InvalidDelta(delta));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidScale(eps));
        }
        if depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        Ok(Self { t0, eps, delta, depth })
    }

    fn target_time(&self, k: usize) -> f64 {
        self.t0 + self.eps * (1.0 - 0.5 * self.delta.powi(k as i32))
    }

    fn source_time(&self, k: usize) -> f64 {
        self.t0 + self.eps * 0.5 * self.delta.powi(k as i32)
    }
}

/// A fragment graph with the nodes standing for the source atoms at `t0`.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub builder: PatternBuilder,
    pub sources: Vec<(f64, usize)>,
}

fn single_atom(m: &LineMeasure) -> Option<f64> {
    let (lo, hi) = m.hull()?;
    (hi == lo).then_some(lo)
}

/// Halves of the cell `[lo, hi]`; the right half keeps the closed right end when `closed`.
fn halves(m: &LineMeasure, lo: f64, hi: f64, closed: bool) -> [(LineMeasure, f64, f64, bool); 2] {
    let mid = 0.5 * (lo + hi);
    [
        (m.restrict(lo, mid, false), lo, mid, false),
        (m.restrict(mid, hi, closed), mid, hi, closed),
    ]
}

/// Builds the fragment carrying `source` (atoms) onto `target` over `[t0, t0 + eps]`.
pub fn build_fragment(source: &LineMeasure, target: &LineMeasure, prm: &FragmentParams) -> Result<Fragment> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if source.has_blocks() {
        return Err(Error::InvalidParameter("fragment sources must be atomic".into()));
    }
    let (ms, mt) = (source.total_mass(), target.total_mass());
    if (ms - mt).abs() > 1e-12 * ms.max(mt) {
        return Err(Error::UnbalancedMeasures(ms, mt));
    }
    let (slo, shi) = source.hull().unwrap();
    let (tlo, thi) = target.hull().unwrap();
    let (xs, xt) = (0.5 * (slo + shi), 0.5 * (tlo + thi));
    let t_end = prm.t0 + prm.eps;
    let tiny = EMPTY * ms;
    let mut b = PatternBuilder::new();

    let src_atoms: Vec<(f64, f64)> = source
        .pieces()
        .iter()
        .filter_map(|p| match *p {
            Piece::Atom { x, m } => Some((x, m)),
            Piece::Block { .. } => None,
        })
        .collect();
    let mut sources: Vec<(f64, usize)> = Vec::new();
    let mut source_node = |b: &mut PatternBuilder, x: f64| -> usize {
        if let Some(&(_, id)) = sources.iter().find(|s| s.0 == x) {
            return id;
        }
        let id = b.node(prm.t0, x);
        sources.push((x, id));
        id
    };

    let add_tips = |b: &mut PatternBuilder, parent: usize, cell: &LineMeasure| {
        for p in cell.pieces() {
            match *p {
                Piece::Atom { x, m } => {
                    let tip = b.node(t_end, x);
                    b.edge(parent, tip, m);
                    b.tip(tip, TipKind::Atom);
                }
                Piece::Block { a, b: hi, m } => {
                    let tip = b.node(t_end, 0.5 * (a + hi));
                    b.edge(parent, tip, m);
                    b.tip(tip, TipKind::Block { width: hi - a });
                }
            }
        }
    };

    let target_atom = single_atom(target);
    if src_atoms.len() == 1 && target_atom.is_some() {
        let s = source_node(&mut b, src_atoms[0].0);
        add_tips(&mut b, s, target);
        return Ok(Fragment { builder: b, sources });
    }

    let mid = b.node(prm.target_time(0), 0.5 * (xs + xt));

    // Source half.
    if src_atoms.len() == 1 {
        let s = source_node(&mut b, src_atoms[0].0);
        b.edge(s, mid, ms);
    } else {
        let mut stack = vec![(mid, source.clone(), slo, shi, true, 0usize)];
        while let Some((node, cell, lo, hi, closed, k)) = stack.pop() {
            for (sub, a, c, cl) in halves(&cell, lo, hi, closed) {
                let m = sub.total_mass();
                if m <= tiny {
                    continue;
                }
                if let Some(x) = single_atom(&sub) {
                    let s = source_node(&mut b, x);
                    b.edge(s, node, m);
                    continue;
                }
                let lam = 0.5 * prm.delta.powi(k as i32 + 1);
                let child = b.node(prm.source_time(k + 1), (1.0 - lam) * 0.5 * (a + c) + lam * xt);
                b.edge(child, node, m);
                if k + 1 >= prm.depth || c - a < MIN_CELL_WIDTH {
                    for p in sub.pieces() {
                        let s = source_node(&mut b, p.lo());
                        b.edge(s, child, p.mass());
                    }
                } else {
                    stack.push((child, sub, a, c, cl, k + 1));
                }
            }
        }
    }

    // Target half.
    if target_atom.is_some() {
        add_tips(&mut b, mid, target);
    } else {
        let mut stack = vec![(mid, target.clone(), tlo, thi, true, 0usize)];
        while let Some((node, cell, lo, hi, closed, k)) = stack.pop() {
            for (sub, a, c, cl) in halves(&cell, lo, hi, closed) {
                if sub.total_mass() <= tiny {
                    continue;
                }
                if single_atom(&sub).is_some() {
                    add_tips(&mut b, node, &sub);
                    continue;
                }
                let lam = 1.0 - 0.5 * prm.delta.powi(k as i32 + 1);
                let child = b.node(prm.target_time(k + 1), (1.0 - lam) * xs + lam * 0.5 * (a + c));
                b.edge(node, child, sub.total_mass());
                if k + 1 >= prm.depth || c - a < MIN_CELL_WIDTH {
                    add_tips(&mut b, child, &sub);
                } else {
                    stack.push((child, sub, a, c, cl, k + 1));
                }
            }
        }
    }
    Ok(Fragment { builder: b, sources })
}

/// Builds several fragments in parallel and glues them in input order.
pub fn build_fragments(
    jobs: &[(LineMeasure, LineMeasure)],
    prm: &FragmentParams,
) -> Result<Vec<Fragment>> {
    jobs.par_iter().map(|(s, t)| build_fragment(s, t, prm)).collect()
}

#[derive(Debug, Clone)]
pub struct DyadicResult {
    pub pattern: IrrigationPattern,
    /// `P + E_kin` over the fragment.
    pub measured: f64,
    pub w2: f64,
    /// `W^2 / eps`, `r^2 Phi / eps` and `eps Phi^{(d-1)/d}` with `d = 1`.
    pub bound_terms: [f64; 3],
}

impl DyadicResult {
    /// Smallest constant `C` with `I <= W^2/eps + C (r^2 Phi / eps + eps)`.
    pub fn constant(&self) -> f64 {
        (self.measured - self.bound_terms[0]) / (self.bound_terms[1] + self.bound_terms[2])
    }
}

/// One atom of mass `mass` at `source_x` spread uniformly onto `[center - r, center + r]`
/// over a layer of height `eps`; `r = 0` sends it to a point.
pub fn dyadic_branch(
    source_x: f64,
    mass: f64,
    center: f64,
    r: f64,
    eps: f64,
    delta: f64,
    depth: usize,
) -> Result<DyadicResult> {
    let prm = FragmentParams::new(0.0, eps, delta, depth)?;
    if !(mass > 0.0) {
        return Err(Error::InvalidMass(mass));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius {r}")));
    }
    let source = LineMeasure::atoms(&[(source_x, mass)]);
    let target = if r == 0.0 {
        LineMeasure::atoms(&[(center, mass)])
    } else {
        LineMeasure::new(vec![Piece::Block { a: center - r, b: center + r, m: mass }])
    };
    let frag = build_fragment(&source, &target, &prm)?;
    let pattern = frag.builder.build(eps, false)?;
    let (p, k) = pattern.internal_energy(0.0, eps)?;
    let w2 = source.w2_sq(&target)?;
    Ok(DyadicResult {
        pattern,
        measured: p + k,
        w2,
        bound_terms: [w2 / eps, r * r * mass / eps, eps],
    })
}
