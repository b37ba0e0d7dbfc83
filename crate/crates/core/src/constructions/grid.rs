//! Global constructions on `[0, T]`: equispaced trunks refined into blocks,
//! equispaced static Dirac branches, and static branches onto a given measure.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::line::{LineMeasure, Piece};
use crate::measure::{AtomicMeasure, Measure};
use crate::pattern::{IrrigationPattern, PatternBuilder, TipKind};
use crate::series::{power_tail, zeta};

use super::dyadic::{build_fragment, FragmentParams, DEFAULT_DELTA, MIN_CELL_WIDTH};

/// `N` equispaced roots, each spread over `[0, T]` by a dyadic fragment onto a
/// block of width `r` centered at the root. The pattern is symmetric.
pub fn uniform_grid(n: usize, r: f64, t: f64, depth: usize) -> Result<IrrigationPattern> {
    check_grid(n, r, t)?;
    let prm = FragmentParams::new(0.0, t, DEFAULT_DELTA, depth)?;
    let m = 1.0 / n as f64;
    let mut b = PatternBuilder::new();
    for i in 0..n {
        let c = (i as f64 + 0.5) * m;
        let src = LineMeasure::atoms(&[(c, m)]);
        let tgt = LineMeasure::new(vec![Piece::Block { a: c - 0.5 * r, b: c + 0.5 * r, m }]);
        b.append(&build_fragment(&src, &tgt, &prm)?.builder);
    }
    b.build(t, true)
}

fn check_grid(n: usize, r: f64, t: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("block width {r}")));
    }
    if r > 1.0 / n as f64 + 1e-12 {
        return Err(Error::OverlappingBlocks(format!("width {r} exceeds spacing 1/{n}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("T = {t}")));
    }
    Ok(())
}

/// The terms `T N`, `r^2 / T` and `1 / (N r^{1-2s})` bounding the uniform grid energy.
pub fn uniform_grid_bound(n: usize, r: f64, t: f64, s: f64) -> [f64; 3] {
    let n = n as f64;
    [t * n, r * r / t, 1.0 / (n * r.powf(1.0 - 2.0 * s))]
}

/// Number of refinement levels a fragment onto a block of width `w` actually uses.
pub fn effective_depth(w: f64, depth: usize) -> usize {
    (1..=depth).find(|&j| w / ((1u64 << j) as f64) < MIN_CELL_WIDTH).unwrap_or(depth).max(1)
}

/// `(p, q)` of the unit fragment at the given depth: a fragment of height `tau`
/// carrying mass `m` onto a block of half-width `rho` has perimeter `tau p` and
/// kinetic energy `m rho^2 q / tau`.
pub fn unit_fragment(depth: usize) -> (f64, f64) {
    static CACHE: Mutex<Option<HashMap<usize, (f64, f64)>>> = Mutex::new(None);
    if let Some(&v) = CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(&depth) {
        return v;
    }
    let prm = FragmentParams::new(0.0, 1.0, DEFAULT_DELTA, depth).expect("valid unit parameters");
    let src = LineMeasure::atoms(&[(0.0, 1.0)]);
    let tgt = LineMeasure::new(vec![Piece::Block { a: -1.0, b: 1.0, m: 1.0 }]);
    let f = build_fragment(&src, &tgt, &prm).expect("unit fragment");
    let p = f.builder.build(1.0, false).expect("unit fragment pattern");
    let v = p.internal_energy(0.0, 1.0).expect("unit interval");
    CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(depth, v);
    v
}

/// `||mu - 1||^2_{H^{-s}}` of `N` equispaced blocks of width `r`, with an
/// error bound. Only multiples of `N` carry Fourier mass. Past the summed terms
/// `sin^2` is replaced by its mean `1/2`, and the error is bounded by the other half.
pub fn block_grid_norm(n: usize, r: f64, s: f64) -> (f64, f64) {
    const TERMS: u64 = 4096;
    let nf = n as f64;
    let mut acc = 0.0;
    for j in (1..=TERMS).rev() {
        let k = nf * j as f64;
        let x = std::f64::consts::PI * k * r;
        let sinc = crate::spectral::sin_pi(k * r) / x;
        acc += k.powf(-2.0 * s) * sinc * sinc;
    }
    let c = 1.0 / (std::f64::consts::PI * r).powi(2) * nf.powf(-2.0 * s - 2.0);
    let (tail, err) = power_tail(2.0 * s + 2.0, TERMS);
    let half = 0.5 * c * tail;
    (2.0 * (acc + half), 2.0 * (half + c * err))
}

/// Full energy of `uniform_grid(n, r, t, depth)` in block mode, without
/// building the pattern: `2 (N T p + r^2 q / (4T) + B)`.
pub fn uniform_grid_energy(n: usize, r: f64, t: f64, s: f64, depth: usize) -> Result<f64> {
    check_grid(n, r, t)?;
    let (p, q) = unit_fragment(effective_depth(r, depth));
    let (b, _) = block_grid_norm(n, r, s);
    Ok(2.0 * (n as f64 * t * p + 0.25 * r * r * q / t + b))
}

/// `N` static branches of mass `1/N` at `(i + 1/2)/N` with atomic tips.
pub fn dirac_grid(n: usize, t: f64) -> Result<IrrigationPattern> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    static_branches(&AtomicMeasure::equispaced(n, 0.5 / n as f64).into(), t)
}

/// Exact full energy of `dirac_grid(n, t)`: `2 T N + 2 * 2 zeta(2s) / N^{2s}`.
pub fn dirac_grid_energy(n: usize, t: f64, s: f64) -> Result<f64> {
    if s <= 0.5 {
        return Err(Error::DivergentBoundaryNorm(s));
    }
    let nf = n as f64;
    Ok(2.0 * t * nf + 4.0 * zeta(2.0 * s) * nf.powf(-2.0 * s))
}

/// One static branch per atom or block of `mu`, ending in a tip of the same kind.
pub fn static_branches(mu: &Measure, t: f64) -> Result<IrrigationPattern> {
    let mut b = PatternBuilder::new();
    let mut add = |x: f64, m: f64, kind: TipKind| {
        let r = b.node(0.0, x);
        let l = b.node(t, x);
        b.edge(r, l, m);
        b.tip(l, kind);
    };
    match mu {
        Measure::Atomic(a) => a.atoms().iter().for_each(|&(x, m)| add(x, m, TipKind::Atom)),
        Measure::Block(bm) => bm
            .blocks()
            .iter()
            .for_each(|bl| add(bl.center, bl.mass, TipKind::Block { width: bl.width })),
    }
    b.build(t, true)
}
