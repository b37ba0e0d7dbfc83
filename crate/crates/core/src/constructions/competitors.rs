//! Competitors that rebuild a pattern on its last layer `[T - eps, T]`.

use crate::error::{Error, Result};
use crate::line::LineMeasure;
use crate::pattern::{IrrigationPattern, PatternBuilder, TipKind, TIME_TOL};
use crate::validate::{validate, Check, ValidationConfig};

use super::dyadic::{build_fragments, FragmentParams, DEFAULT_DELTA, DEFAULT_DEPTH};

/// Where a post-cut edge starts.
#[derive(Debug, Clone, Copy, PartialEq)]
enum From {
    Cut(usize),
    Post(usize),
}

/// A pattern split at time `tc`. The part up to `tc` is rebuilt in `pre`, with
/// every trajectory alive at `tc` ending in a cut node; trajectories at equal
/// positions share one cut node.
struct Cut {
    tc: f64,
    pre: PatternBuilder,
    /// `(x, id in pre)` sorted by position.
    cut_nodes: Vec<(f64, usize)>,
    /// Original ids of nodes strictly after `tc`.
    post_nodes: Vec<usize>,
    post_edges: Vec<(From, usize, f64)>,
}

impl Cut {
    fn outflow(&self, id: usize) -> f64 {
        self.post_edges.iter().filter(|e| e.0 == From::Cut(id)).map(|e| e.2).sum()
    }
}

fn cut_at(p: &IrrigationPattern, tc: f64) -> Cut {
    let nodes = p.nodes();
    let mut pre = PatternBuilder::new();
    let mut map = vec![usize::MAX; nodes.len()];
    let mut cut_nodes: Vec<(f64, usize)> = Vec::new();
    let mut cut = |pre: &mut PatternBuilder, x: f64| -> usize {
        if let Some(&(_, id)) = cut_nodes.iter().find(|c| c.0 == x) {
            return id;
        }
        let id = pre.node(tc, x);
        cut_nodes.push((x, id));
        id
    };
    let mut post_nodes = Vec::new();
    for v in p.time_order() {
        let n = nodes[v];
        if n.t < tc - TIME_TOL {
            map[v] = pre.node(n.t, n.x);
        } else if n.t <= tc + TIME_TOL {
            map[v] = cut(&mut pre, n.x);
        } else {
            post_nodes.push(v);
        }
    }
    let mut post_edges = Vec::new();
    for (k, e) in p.edges().iter().enumerate() {
        let (a, b) = (map[e.from], map[e.to]);
        match (a != usize::MAX, b != usize::MAX) {
            (true, true) => pre.edge(a, b, e.mass),
            (true, false) if nodes[e.from].t < tc - TIME_TOL => {
                let c = cut(&mut pre, p.edge_position(k, tc));
                pre.edge(a, c, e.mass);
                post_edges.push((From::Cut(c), e.to, e.mass));
            }
            (true, false) => post_edges.push((From::Cut(a), e.to, e.mass)),
            _ => post_edges.push((From::Post(e.from), e.to, e.mass)),
        }
    }
    cut_nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Cut { tc, pre, cut_nodes, post_nodes, post_edges }
}

fn check_layer(p: &IrrigationPattern, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= p.t_max()) {
        return Err(Error::InvalidParameter(format!("layer height {eps} outside (0, T]")));
    }
    Ok(())
}

/// Rebuilds the post-cut part with node positions from `place` and tip widths
/// from `width`, for each sign in `copies` with the mass scaled by `share`.
fn rebuild(
    p: &IrrigationPattern,
    cut: &Cut,
    copies: &[f64],
    share: f64,
    place: impl Fn(usize, f64) -> f64,
    width: impl Fn(f64) -> f64,
) -> Result<IrrigationPattern> {
    let mut b = cut.pre.clone();
    let nodes = p.nodes();
    for &sign in copies {
        let mut map = vec![usize::MAX; nodes.len()];
        for &v in &cut.post_nodes {
            map[v] = b.node(nodes[v].t, place(v, sign));
        }
        for &(from, to, m) in &cut.post_edges {
            let a = match from {
                From::Cut(c) => c,
                From::Post(v) => map[v],
            };
            b.edge(a, map[to], share * m);
        }
        for tip in p.tips() {
            let kind = match tip.kind {
                TipKind::Atom => TipKind::Atom,
                TipKind::Block { width: w } => TipKind::Block { width: width(w) },
            };
            b.tip(map[tip.node], kind);
        }
    }
    Ok(IrrigationPattern::new(p.t_max(), b.nodes, b.edges, b.tips, p.symmetric(), p.origin())?)
}

/// Position at the cut time of the trajectory through each post-cut node.
fn cut_ancestors(p: &IrrigationPattern, cut: &Cut) -> Result<Vec<f64>> {
    let mut anc = vec![f64::NAN; p.nodes().len()];
    let cut_x = |id: usize| cut.pre.nodes[id].x;
    // Post nodes are in time order, so parents are resolved first.
    for &v in &cut.post_nodes {
        let mut x: Option<f64> = None;
        for &(from, to, _) in &cut.post_edges {
            if to != v {
                continue;
            }
            let a = match from {
                From::Cut(c) => cut_x(c),
                From::Post(u) => anc[u],
            };
            match x {
                Some(x0) if x0 != a => {
                    return Err(Error::InvalidPattern(format!(
                        "node {v} merges trajectories from different positions at the cut"
                    )))
                }
                _ => x = Some(a),
            }
        }
        anc[v] = x.unwrap_or(p.nodes()[v].x);
    }
    Ok(anc)
}

/// Halves the displacement of every trajectory over `[T - eps, T]`: perimeter
/// is unchanged and the kinetic energy of the layer is quartered.
pub fn shrink_competitor(p: &IrrigationPattern, eps: f64) -> Result<IrrigationPattern> {
    check_layer(p, eps)?;
    let cut = cut_at(p, p.t_max() - eps);
    let anc = cut_ancestors(p, &cut)?;
    rebuild(p, &cut, &[1.0], 1.0, |v, _| 0.5 * (anc[v] + p.nodes()[v].x), |w| 0.5 * w)
}

/// Splits the layer `[T - eps, T]` into two half-mass copies drifting apart at
/// speed `eta / eps`, so the boundary measure becomes the average of its two
/// translates by `eta` and `-eta`.
pub fn shift_competitor(p: &IrrigationPattern, eps: f64, eta: f64) -> Result<IrrigationPattern> {
    check_layer(p, eps)?;
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidParameter(format!("shift {eta} outside [0, 1/2)")));
    }
    if eta == 0.0 {
        return Ok(p.clone());
    }
    let cut = cut_at(p, p.t_max() - eps);
    let tc = cut.tc;
    let v = eta / eps;
    rebuild(p, &cut, &[1.0, -1.0], 0.5, |n, sign| {
        let node = p.nodes()[n];
        node.x + sign * v * (node.t - tc)
    }, |w| w)
}

/// Result of the covering competitor.
#[derive(Debug, Clone)]
pub struct CoveringResult {
    pub pattern: IrrigationPattern,
    /// Radius `eps^{2/(2+alpha)}` of the covering balls.
    pub r: f64,
    /// Centers chosen by the greedy covering.
    pub centers: Vec<f64>,
    /// `I` over `[T - eps, T]`.
    pub measured: f64,
    pub w2: f64,
    /// `W^2 / eps`, `r^2 / eps` and `M r^{-alpha} eps`.
    pub bound_terms: [f64; 3],
}

impl CoveringResult {
    /// Smallest `C` with `I <= W^2/eps + C (r^2/eps + M r^{-alpha} eps)`.
    pub fn constant(&self) -> f64 {
        (self.measured - self.bound_terms[0]) / (self.bound_terms[1] + self.bound_terms[2])
    }
}

/// Greedy covering of the support: the first center is the leftmost support
/// point and each next one is the first support point at distance at least `2r`.
pub fn greedy_centers(mu: &LineMeasure, r: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for piece in mu.pieces() {
        let (a, b) = (piece.lo(), piece.hi());
        loop {
            let next = match out.last() {
                None => a,
                Some(&c) => (c + 2.0 * r).max(a),
            };
            if next > b {
                break;
            }
            out.push(next);
            if a == b {
                break;
            }
        }
    }
    out
}

/// Assignment intervals around the centers: neighbor midpoints, capped at
/// distance `5r` from the center.
fn cells(centers: &[f64], r: f64) -> Vec<(f64, f64)> {
    let n = centers.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (centers[i - 1] + centers[i]) };
            let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (centers[i] + centers[i + 1]) };
            (lo.max(centers[i] - 5.0 * r), hi.min(centers[i] + 5.0 * r))
        })
        .collect()
}

/// Replaces the last layer `[T - eps, T]` of a monotone pattern by dyadic
/// fragments, one per cell of a greedy covering of the boundary support at
/// radius `r = eps^{2/(2+alpha)}`. Each fragment carries the quantile slice of
/// the cut measure that the monotone coupling sends to its cell.
pub fn covering_competitor(p: &IrrigationPattern, eps: f64, alpha: f64, m_const: f64) -> Result<CoveringResult> {
    covering_with(p, eps, alpha, m_const, DEFAULT_DELTA, DEFAULT_DEPTH)
}

pub fn covering_with(
    p: &IrrigationPattern,
    eps: f64,
    alpha: f64,
    m_const: f64,
    delta: f64,
    depth: usize,
) -> Result<CoveringResult> {
    check_layer(p, eps)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1]")));
    }
    let cfg = ValidationConfig { checks: vec![Check::MonotoneCoupling], ..ValidationConfig::default() };
    if let Some(f) = validate(p, &cfg).failures().first() {
        return Err(Error::NotMonotone(f.witness.clone().unwrap_or_default()));
    }
    let tc = p.t_max() - eps;
    let prm = FragmentParams::new(tc, eps, delta, depth)?;
    let cut = cut_at(p, tc);
    let source = LineMeasure::atoms(&cut.cut_nodes.iter().map(|&(x, id)| (x, cut.outflow(id))).collect::<Vec<_>>());
    let target = p.tips_line();
    let r = eps.powf(2.0 / (2.0 + alpha));
    let centers = greedy_centers(&target, r);
    let cells = cells(&centers, r);

    let mut jobs = Vec::with_capacity(cells.len());
    let mut u = 0.0;
    for (i, &(lo, hi)) in cells.iter().enumerate() {
        let last = i + 1 == cells.len();
        let tgt = target.restrict(lo, hi, last);
        let m = tgt.total_mass();
        if m <= 0.0 {
            continue;
        }
        let u1 = if last { f64::INFINITY } else { u + m };
        jobs.push((source.quantile_slice(u, u1), tgt));
        u += m;
    }
    let frags = build_fragments(&jobs, &prm)?;

    let mut b = cut.pre.clone();
    for f in &frags {
        let mut map = vec![usize::MAX; f.builder.nodes.len()];
        for &(x, id) in &f.sources {
            let i = cut.cut_nodes.iter().position(|c| c.0 == x).expect("fragment sources are cut positions");
            map[id] = cut.cut_nodes[i].1;
        }
        for n in &f.builder.nodes {
            if map[n.id] == usize::MAX {
                map[n.id] = b.node(n.t, n.x);
            }
        }
        for e in &f.builder.edges {
            b.edge(map[e.from], map[e.to], e.mass);
        }
        for t in &f.builder.tips {
            b.tip(map[t.node], t.kind);
        }
    }
    let pattern = IrrigationPattern::new(p.t_max(), b.nodes, b.edges, b.tips, p.symmetric(), p.origin())?;
    let (per, kin) = pattern.internal_energy(tc, p.t_max())?;
    let w2 = source.w2_sq(&target)?;
    Ok(CoveringResult {
        pattern,
        r,
        centers,
        measured: per + kin,
        w2,
        bound_terms: [w2 / eps, r * r / eps, m_const * r.powf(-alpha) * eps],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::BoundaryMode;

    fn v_pattern() -> IrrigationPattern {
        let mut b = PatternBuilder::new();
        let r = b.node(0.0, 0.5);
        let l = b.node(1.0, 0.4);
        let h = b.node(1.0, 0.6);
        b.edge(r, l, 0.5);
        b.edge(r, h, 0.5);
        b.tip(l, TipKind::Atom);
        b.tip(h, TipKind::Atom);
        b.build(1.0, true).unwrap()
    }

    fn static_atom(x: f64, t: f64) -> IrrigationPattern {
        let mut b = PatternBuilder::new();
        let r = b.node(0.0, x);
        let l = b.node(t, x);
        b.edge(r, l, 1.0);
        b.tip(l, TipKind::Atom);
        b.build(t, true).unwrap()
    }

    #[test]
    fn shrink_quarters_kinetic_energy() {
        let v = v_pattern();
        let s = shrink_competitor(&v, 1.0).unwrap();
        let (p0, k0) = v.internal_energy(0.0, 1.0).unwrap();
        let (p1, k1) = s.internal_energy(0.0, 1.0).unwrap();
        assert_eq!(p0, p1);
        assert!((k1 - 0.25 * k0).abs() < 1e-15);
        let tips: Vec<f64> = s.tips().iter().map(|t| s.nodes()[t.node].x).collect();
        assert!((tips[0] - 0.45).abs() < 1e-15 && (tips[1] - 0.55).abs() < 1e-15);
        let st = static_atom(0.3, 1.0);
        let s2 = shrink_competitor(&st, 0.5).unwrap();
        assert_eq!(s2.internal_energy(0.0, 1.0).unwrap(), st.internal_energy(0.0, 1.0).unwrap());
    }

    #[test]
    fn shift_adds_eta_squared_over_eps() {
        let v = v_pattern();
        let (eps, eta) = (0.5, 0.05);
        let s = shift_competitor(&v, eps, eta).unwrap();
        let (_, k0) = v.internal_energy(0.5, 1.0).unwrap();
        let (_, k1) = s.internal_energy(0.5, 1.0).unwrap();
        assert!((k1 - k0 - eta * eta / eps).abs() < 1e-14);
        assert_eq!(shift_competitor(&v, eps, 0.0).unwrap(), v);
    }

    #[test]
    fn shift_spectrum_is_cosine_modulated() {
        use crate::spectral::spectrum_of;
        let st = static_atom(0.3, 1.0);
        let s = shift_competitor(&st, 1.0, 0.1).unwrap();
        let a = spectrum_of(&st.tip_measure(BoundaryMode::Atomic).unwrap(), 32, false);
        let b = spectrum_of(&s.tip_measure(BoundaryMode::Atomic).unwrap(), 32, false);
        for k in 0..=32i64 {
            let c = (0.2 * std::f64::consts::PI * k as f64).cos();
            assert!((b.coeff(k) - a.coeff(k) * c).norm() < 1e-12);
        }
    }

    #[test]
    fn covering_single_atom_is_straight_transport() {
        let v = {
            let mut b = PatternBuilder::new();
            let r = b.node(0.0, 0.4);
            let l = b.node(1.0, 0.5);
            b.edge(r, l, 1.0);
            b.tip(l, TipKind::Atom);
            b.build(1.0, true).unwrap()
        };
        let c = covering_competitor(&v, 0.25, 1.0, 1.0).unwrap();
        assert_eq!(c.centers.len(), 1);
        let w2 = (0.1f64 * 0.25).powi(2);
        assert!((c.w2 - w2).abs() < 1e-15);
        assert!((c.measured - (0.25 + c.w2 / 0.25)).abs() < 1e-14);
    }

    #[test]
    fn greedy_covering_of_blocks() {
        let mu = LineMeasure::new(vec![crate::line::Piece::Block { a: 0.0, b: 1.0, m: 1.0 }]);
        let c = greedy_centers(&mu, 0.1);
        assert_eq!(c.len(), 6);
        assert!((c[1] - 0.2).abs() < 1e-15);
    }
}
