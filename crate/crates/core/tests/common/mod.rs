#![allow(dead_code)]

use branchlab_core::measure::AtomicMeasure;
use branchlab_core::pattern::{IrrigationPattern, PatternBuilder, TipKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random order-preserving binary tree of unit mass on `[0, t]`. Each split
/// divides the current interval in two and children stay inside their half,
/// so trajectories never cross.
pub fn random_tree(seed: u64, t: f64, max_depth: usize) -> IrrigationPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = PatternBuilder::new();
    let root = b.node(0.0, rng.gen_range(0.3..0.7));
    grow(&mut b, &mut rng, root, 0.0, 1.0, 1.0, 0.0, t, max_depth);
    b.build(t, false).expect("random tree is valid")
}

#[allow(clippy::too_many_arguments)]
fn grow(
    b: &mut PatternBuilder,
    rng: &mut ChaCha8Rng,
    v: usize,
    lo: f64,
    hi: f64,
    mass: f64,
    t0: f64,
    t: f64,
    depth: usize,
) {
    if depth == 0 || rng.gen_bool(0.2) {
        let leaf = b.node(t, rng.gen_range(lo..hi));
        b.edge(v, leaf, mass);
        b.tip(leaf, TipKind::Atom);
        return;
    }
    let ts = t0 + (t - t0) * rng.gen_range(0.1..0.8);
    let w = rng.gen_range(0.2..0.8);
    let mid = lo + (hi - lo) * w;
    let (l, r) = (b.node(ts, rng.gen_range(lo..mid)), b.node(ts, rng.gen_range(mid..hi)));
    b.edge(v, l, mass * w);
    b.edge(v, r, mass * (1.0 - w));
    grow(b, rng, l, lo, mid, mass * w, ts, t, depth - 1);
    grow(b, rng, r, mid, hi, mass * (1.0 - w), ts, t, depth - 1);
}

/// Random atomic measure with `n` atoms of total mass one.
pub fn random_atoms(seed: u64, n: usize) -> AtomicMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.05..1.0))).collect();
    let total: f64 = raw.iter().map(|a| a.1).sum();
    AtomicMeasure::canonicalize(&raw.iter().map(|&(x, m)| (x, m / total)).collect::<Vec<_>>()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
