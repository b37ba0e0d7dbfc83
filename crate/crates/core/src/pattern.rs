//! Irrigation patterns: finite mass-carrying graphs on `[0, T]` whose
//! trajectories are affine between nodes.
//!
//! Positions are stored unwrapped on the real line (with a recorded origin)
//! so that monotonicity and cones are plain interval statements; boundary
//! measures wrap back to the torus.
//!
//! In one dimension the perimeter of a branch does not depend on its mass, so
//! the perimeter term is the number of live edges integrated in time. Edges are
//! counted individually even when two of them run along the same track.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{LineMeasure, Piece};
use crate::measure::{AtomicMeasure, Block, BlockMeasure, Measure, MollifiedMeasure};
use crate::spectral::{hs_norm_sq, spectrum_of, spectrum_of_mollified, NormReport};

/// Slack for time comparisons and Kirchhoff balances.
pub const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TipKind {
    Atom,
    Block { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tip {
    pub node: usize,
    #[serde(flatten)]
    pub kind: TipKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Tips as point masses; finite only for `s > 1/2`.
    Atomic,
    /// Tips as uniform blocks of their recorded widths.
    Block,
    /// Tips mollified at the given kernel scale.
    Mollified { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub perimeter: f64,
    pub kinetic: f64,
    pub boundary_penalty: f64,
    pub total: f64,
    /// Uncertainty of the boundary term from spectral truncation.
    pub boundary_tail: f64,
}

impl EnergyBreakdown {
    pub fn new(perimeter: f64, kinetic: f64, boundary_penalty: f64, boundary_tail: f64) -> Self {
        Self { perimeter, kinetic, boundary_penalty, total: perimeter + kinetic + boundary_penalty, boundary_tail }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "PatternRepr")]
pub struct IrrigationPattern {
    t_max: f64,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    tips: Vec<Tip>,
    symmetric: bool,
    origin: f64,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    tip_of: Vec<Option<usize>>,
    /// Mass of a pattern that is a single tip without edges.
    isolated_mass: f64,
}

#[derive(Deserialize)]
struct PatternRepr {
    #[serde(rename = "T")]
    t_max: f64,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    tips: Vec<Tip>,
    symmetric: bool,
    #[serde(default)]
    origin: f64,
}

impl TryFrom<PatternRepr> for IrrigationPattern {
    type Error = Error;
    fn try_from(r: PatternRepr) -> Result<Self> {
        for (i, n) in r.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::InvalidPattern(format!("node ids must be 0..n in order, found {} at {i}", n.id)));
            }
        }
        IrrigationPattern::new(r.t_max, r.nodes, r.edges, r.tips, r.symmetric, r.origin)
    }
}

/// Incremental construction with ids assigned in insertion order.
#[derive(Debug, Clone, Default)]
pub struct PatternBuilder {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub tips: Vec<Tip>,
}

impl PatternBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, t: f64, x: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { id, t, x });
        id
    }

    pub fn edge(&mut self, from: usize, to: usize, mass: f64) {
        self.edges.push(Edge { from, to, mass });
    }

    pub fn tip(&mut self, node: usize, kind: TipKind) {
        self.tips.push(Tip { node, kind });
    }

    /// Appends another builder's graph, returning the id offset applied to it.
    pub fn append(&mut self, other: &PatternBuilder) -> usize {
        let off = self.nodes.len();
        for n in &other.nodes {
            self.node(n.t, n.x);
        }
        for e in &other.edges {
            self.edge(e.from + off, e.to + off, e.mass);
        }
        for t in &other.tips {
            self.tip(t.node + off, t.kind);
        }
        off
    }

    pub fn build(self, t_max: f64, symmetric: bool) -> Result<IrrigationPattern> {
        IrrigationPattern::new(t_max, self.nodes, self.edges, self.tips, symmetric, 0.0)
    }
}

/// A slice `mu_t` with, per atom, the edges carrying it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub t: f64,
    pub measure: AtomicMeasure,
    pub branch_ids: Vec<Vec<usize>>,
}

impl IrrigationPattern {
    pub fn new(
        t_max: f64,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        tips: Vec<Tip>,
        symmetric: bool,
        origin: f64,
    ) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("T = {t_max}")));
        }
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidPattern("no nodes".into()));
        }
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (i, nd) in nodes.iter().enumerate() {
            if nd.id != i || !nd.x.is_finite() || !nd.t.is_finite() {
                return Err(Error::InvalidPattern(format!("bad node {i}")));
            }
            if nd.t < -TIME_TOL || nd.t > t_max + TIME_TOL {
                return Err(Error::InvalidPattern(format!("node {i} at time {} outside [0, T]", nd.t)));
            }
        }
        for (k, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::NodeNotFound(e.from.max(e.to)));
            }
            if !(e.mass > 0.0) || !e.mass.is_finite() {
                return Err(Error::InvalidMass(e.mass));
            }
            if nodes[e.to].t <= nodes[e.from].t {
                return Err(Error::InvalidPattern(format!("edge {k} does not go forward in time")));
            }
            out_edges[e.from].push(k);
            in_edges[e.to].push(k);
        }
        let mut tip_of = vec![None; n];
        for (k, tip) in tips.iter().enumerate() {
            if tip.node >= n {
                return Err(Error::NodeNotFound(tip.node));
            }
            if tip_of[tip.node].is_some() {
                return Err(Error::InvalidPattern(format!("node {} has two tips", tip.node)));
            }
            if let TipKind::Block { width } = tip.kind {
                if !(width > 0.0 && width <= 1.0) {
                    return Err(Error::InvalidParameter(format!("tip width {width}")));
                }
            }
            tip_of[tip.node] = Some(k);
        }
        let total: f64 = (0..n)
            .filter(|&i| in_edges[i].is_empty())
            .map(|i| out_edges[i].iter().map(|&k| edges[k].mass).sum::<f64>())
            .sum();
        for i in 0..n {
            let inflow: f64 = in_edges[i].iter().map(|&k| edges[k].mass).sum();
            let outflow: f64 = out_edges[i].iter().map(|&k| edges[k].mass).sum();
            let is_leaf = out_edges[i].is_empty();
            if is_leaf {
                if (nodes[i].t - t_max).abs() > TIME_TOL {
                    return Err(Error::InvalidPattern(format!("leaf {i} is not at time T")));
                }
                if tip_of[i].is_none() {
                    return Err(Error::InvalidPattern(format!("leaf {i} has no tip")));
                }
            } else {
                if tip_of[i].is_some() {
                    return Err(Error::InvalidPattern(format!("interior node {i} has a tip")));
                }
                if !in_edges[i].is_empty() && (inflow - outflow).abs() > TIME_TOL * total.max(1.0) {
                    return Err(Error::InvalidPattern(format!(
                        "node {i} violates conservation: in {inflow}, out {outflow}"
                    )));
                }
            }
        }
        let isolated = (0..n).filter(|&i| in_edges[i].is_empty() && out_edges[i].is_empty()).count();
        if isolated > 0 && !(n == 1 && edges.is_empty()) {
            return Err(Error::InvalidPattern("isolated node in a pattern with edges".into()));
        }
        Ok(Self { t_max, nodes, edges, tips, symmetric, origin, out_edges, in_edges, tip_of, isolated_mass: 1.0 })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn tips(&self) -> &[Tip] {
        &self.tips
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn tip_at(&self, node: usize) -> Option<&Tip> {
        self.tip_of[node].map(|k| &self.tips[k])
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.in_edges[i].is_empty()).collect()
    }

    /// Mass passing through a node.
    pub fn throughput(&self, node: usize) -> f64 {
        let inflow: f64 = self.in_edges[node].iter().map(|&k| self.edges[k].mass).sum();
        if self.in_edges[node].is_empty() {
            self.out_edges[node].iter().map(|&k| self.edges[k].mass).sum()
        } else {
            inflow
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.roots()
            .into_iter()
            .map(|r| {
                if self.out_edges[r].is_empty() {
                    self.tip_mass(r)
                } else {
                    self.throughput(r)
                }
            })
            .sum()
    }

    /// Mass delivered to a leaf; an isolated leaf carries the whole pattern mass.
    pub fn tip_mass(&self, node: usize) -> f64 {
        if self.in_edges[node].is_empty() {
            self.isolated_mass
        } else {
            self.throughput(node)
        }
    }

    pub fn is_forest(&self) -> bool {
        self.in_edges.iter().all(|v| v.len() <= 1)
    }

    /// Node indices in nondecreasing time, which is a topological order.
    pub fn time_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].t.total_cmp(&self.nodes[b].t).then(a.cmp(&b)));
        order
    }

    /// Sorted distinct node times.
    pub fn node_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.nodes.iter().map(|n| n.t).collect();
        ts.push(0.0);
        ts.push(self.t_max);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        ts
    }

    pub fn edge_position(&self, k: usize, t: f64) -> f64 {
        let e = self.edges[k];
        let (a, b) = (self.nodes[e.from], self.nodes[e.to]);
        if t <= a.t {
            return a.x;
        }
        if t >= b.t {
            return b.x;
        }
        a.x + (b.x - a.x) * (t - a.t) / (b.t - a.t)
    }

    pub fn edge_velocity(&self, k: usize) -> f64 {
        let e = self.edges[k];
        let (a, b) = (self.nodes[e.from], self.nodes[e.to]);
        (b.x - a.x) / (b.t - a.t)
    }

    /// Edges alive at `t`: half-open `[t_from, t_to)`, except that edges ending
    /// at `T` are alive at `T`.
    pub fn live_edges(&self, t: f64) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| {
                let e = self.edges[k];
                let (t0, t1) = (self.nodes[e.from].t, self.nodes[e.to].t);
                t0 <= t && (t < t1 || (t1 >= self.t_max - TIME_TOL && t >= self.t_max - TIME_TOL))
            })
            .collect()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_TOL && t <= self.t_max + TIME_TOL) {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_max });
        }
        Ok(())
    }

    /// The unwrapped slice as a line measure of atoms.
    pub fn slice_line(&self, t: f64) -> Result<LineMeasure> {
        self.check_time(t)?;
        let mut atoms: Vec<(f64, f64)> = self
            .live_edges(t)
            .into_iter()
            .map(|k| (self.edge_position(k, t), self.edges[k].mass))
            .collect();
        atoms.extend(self.isolated_leaves(t));
        Ok(LineMeasure::atoms(&atoms))
    }

    fn isolated_leaves(&self, t: f64) -> Vec<(f64, f64)> {
        if t < self.t_max - TIME_TOL {
            return Vec::new();
        }
        (0..self.nodes.len())
            .filter(|&i| self.in_edges[i].is_empty() && self.out_edges[i].is_empty())
            .map(|i| (self.nodes[i].x, self.isolated_mass))
            .collect()
    }

    pub fn slice(&self, t: f64) -> Result<SliceResult> {
        self.check_time(t)?;
        let live = self.live_edges(t);
        let mut raw: Vec<(f64, f64, Option<usize>)> = live
            .iter()
            .map(|&k| (crate::measure::wrap(self.edge_position(k, t)), self.edges[k].mass, Some(k)))
            .collect();
        raw.extend(self.isolated_leaves(t).into_iter().map(|(x, m)| (crate::measure::wrap(x), m, None)));
        if raw.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let measure = AtomicMeasure::canonicalize(&raw.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>())?;
        let mut branch_ids = vec![Vec::new(); measure.len()];
        for (x, _, k) in raw {
            if let Some(k) = k {
                let i = measure
                    .atoms()
                    .iter()
                    .position(|a| (a.0 - x).abs() <= crate::measure::SNAP)
                    .unwrap_or(0);
                branch_ids[i].push(k);
            }
        }
        Ok(SliceResult { t, measure, branch_ids })
    }

    /// `(P, E_kin)` over `[a, b]`.
    pub fn internal_energy(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        self.check_time(a)?;
        self.check_time(b)?;
        if !(a < b) {
            return Err(Error::TimeOutOfRange { t: b, t_max: self.t_max });
        }
        Ok(self.internal_energy_of(0..self.edges.len(), a, b))
    }

    /// `(P, E_kin)` over `[a, b]` restricted to the given edges.
    pub fn internal_energy_of(&self, edges: impl IntoIterator<Item = usize>, a: f64, b: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut kin = 0.0;
        for k in edges {
            let e = self.edges[k];
            let (t0, t1) = (self.nodes[e.from].t, self.nodes[e.to].t);
            let overlap = b.min(t1) - a.max(t0);
            if overlap > 0.0 {
                let v = self.edge_velocity(k);
                p += overlap;
                kin += e.mass * v * v * overlap;
            }
        }
        (p, kin)
    }

    /// Tips as an unwrapped line measure; block tips become uniform pieces.
    pub fn tips_line(&self) -> LineMeasure {
        LineMeasure::new(
            self.tips
                .iter()
                .map(|tip| {
                    let x = self.nodes[tip.node].x;
                    let m = self.tip_mass(tip.node);
                    match tip.kind {
                        TipKind::Atom => Piece::Atom { x, m },
                        TipKind::Block { width } => Piece::Block { a: x - 0.5 * width, b: x + 0.5 * width, m },
                    }
                })
                .collect(),
        )
    }

    /// Boundary measure on the torus for the given mode.
    pub fn tip_measure(&self, mode: BoundaryMode) -> Result<Measure> {
        let atoms_only = self.tips.iter().all(|t| t.kind == TipKind::Atom);
        let blocks_only = self.tips.iter().all(|t| matches!(t.kind, TipKind::Block { .. }));
        let as_atoms = || -> Result<Measure> {
            Ok(AtomicMeasure::canonicalize(
                &self
                    .tips
                    .iter()
                    .map(|t| (self.nodes[t.node].x, self.tip_mass(t.node)))
                    .collect::<Vec<_>>(),
            )?
            .into())
        };
        let as_blocks = || -> Result<Measure> {
            Ok(BlockMeasure::new(
                self.tips
                    .iter()
                    .map(|t| Block {
                        center: self.nodes[t.node].x,
                        width: match t.kind {
                            TipKind::Block { width } => width,
                            TipKind::Atom => unreachable!(),
                        },
                        mass: self.tip_mass(t.node),
                    })
                    .collect(),
            )?
            .into())
        };
        match mode {
            BoundaryMode::Atomic => as_atoms(),
            BoundaryMode::Block => {
                if !blocks_only {
                    return Err(Error::InvalidPattern("block boundary mode needs block tips".into()));
                }
                as_blocks()
            }
            BoundaryMode::Mollified { .. } => {
                if atoms_only {
                    as_atoms()
                } else if blocks_only {
                    as_blocks()
                } else {
                    Err(Error::InvalidPattern("mixed atom and block tips".into()))
                }
            }
        }
    }

    /// `||mu_T - 1||^2_{H^{-s}}` for one boundary.
    pub fn boundary_norm(&self, s: f64, mode: BoundaryMode, k: usize) -> Result<NormReport> {
        if mode == BoundaryMode::Atomic && s <= 0.5 {
            return Err(Error::DivergentBoundaryNorm(s));
        }
        let mu = self.tip_measure(mode)?;
        let sp = match mode {
            BoundaryMode::Mollified { epsilon } => spectrum_of_mollified(&MollifiedMeasure::new(mu, epsilon)?, k, true),
            _ => spectrum_of(&mu, k, true),
        };
        hs_norm_sq(&sp, s)
    }

    /// Internal energy over the whole height plus boundary terms; symmetric
    /// patterns count the mirrored half and both boundaries.
    pub fn full_energy(&self, s: f64, mode: BoundaryMode, k: usize) -> Result<EnergyBreakdown> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter(format!("s = {s} outside (0, 1)")));
        }
        let (p, kin) = self.internal_energy_of(0..self.edges.len(), 0.0, self.t_max);
        let norm = self.boundary_norm(s, mode, k)?;
        let factor = if self.symmetric { 2.0 } else { 1.0 };
        Ok(EnergyBreakdown::new(factor * p, factor * kin, factor * norm.value, factor * norm.tail))
    }

    /// Forward subsystem: the mass passing through `node` and everything it irrigates.
    ///
    /// Where flows merge, the subsystem keeps the proportional share of each
    /// downstream edge.
    pub fn subsystem(&self, node: usize) -> Result<IrrigationPattern> {
        if node >= self.nodes.len() {
            return Err(Error::NodeNotFound(node));
        }
        let n = self.nodes.len();
        let mut frac = vec![0.0; n];
        frac[node] = 1.0;
        let mut reach = vec![false; n];
        reach[node] = true;
        for v in self.time_order() {
            if v == node || !self.in_edges[v].iter().any(|&k| reach[self.edges[k].from]) {
                continue;
            }
            let inflow = self.throughput(v);
            frac[v] = self.in_edges[v]
                .iter()
                .map(|&k| self.edges[k].mass * frac[self.edges[k].from])
                .sum::<f64>()
                / inflow;
            reach[v] = true;
        }
        let mut b = PatternBuilder::new();
        let mut map = vec![usize::MAX; n];
        for v in self.time_order() {
            if reach[v] {
                map[v] = b.node(self.nodes[v].t, self.nodes[v].x);
            }
        }
        for e in &self.edges {
            if reach[e.from] {
                let m = e.mass * frac[e.from];
                if m > 0.0 {
                    b.edge(map[e.from], map[e.to], m);
                }
            }
        }
        for tip in &self.tips {
            if reach[tip.node] {
                b.tip(map[tip.node], tip.kind);
            }
        }
        let mut sub = IrrigationPattern::new(self.t_max, b.nodes, b.edges, b.tips, self.symmetric, self.origin)?;
        if sub.edges.is_empty() {
            sub.isolated_mass = self.tip_mass(node);
        }
        Ok(sub)
    }

    /// Leaf tip intervals `[lo, hi]` per node, as the hull over all irrigated tips.
    pub fn tip_hulls(&self) -> Vec<(f64, f64)> {
        let n = self.nodes.len();
        let mut hull = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
        for v in self.time_order().into_iter().rev() {
            if let Some(tip) = self.tip_at(v) {
                let x = self.nodes[v].x;
                let w = match tip.kind {
                    TipKind::Atom => 0.0,
                    TipKind::Block { width } => 0.5 * width,
                };
                hull[v] = (x - w, x + w);
            }
            for &k in &self.out_edges[v] {
                let c = hull[self.edges[k].to];
                hull[v] = (hull[v].0.min(c.0), hull[v].1.max(c.1));
            }
        }
        hull
    }

    /// Copy with node positions replaced.
    pub fn with_positions(&self, xs: &[f64]) -> Self {
        let mut p = self.clone();
        for (n, &x) in p.nodes.iter_mut().zip(xs) {
            n.x = x;
        }
        p
    }

    /// Copy with node times replaced; the caller keeps edges forward in time.
    pub fn with_times(&self, ts: &[f64]) -> Self {
        let mut p = self.clone();
        for (n, &t) in p.nodes.iter_mut().zip(ts) {
            n.t = t;
        }
        p
    }

    pub fn with_origin(mut self, origin: f64) -> Self {
        self.origin = origin;
        self
    }

    pub fn to_builder(&self) -> PatternBuilder {
        PatternBuilder { nodes: self.nodes.clone(), edges: self.edges.clone(), tips: self.tips.clone() }
    }
}

impl Serialize for IrrigationPattern {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("IrrigationPattern", 6)?;
        st.serialize_field("T", &self.t_max)?;
        st.serialize_field("nodes", &self.nodes)?;
        st.serialize_field("edges", &self.edges)?;
        st.serialize_field("tips", &self.tips)?;
        st.serialize_field("symmetric", &self.symmetric)?;
        st.serialize_field("origin", &self.origin)?;
        st.end()
    }
}
