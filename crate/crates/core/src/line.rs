//! Measures on the real line made of atoms and uniform blocks, with exact
//! quantile arithmetic. Used for unwrapped pattern coordinates.

use crate::error::{Error, Result};
use crate::measure::{AtomicMeasure, BlockMeasure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Atom { x: f64, m: f64 },
    /// Uniform mass `m` on `[a, b]` with `a < b`.
    Block { a: f64, b: f64, m: f64 },
}

impl Piece {
    pub fn mass(&self) -> f64 {
        match *self {
            Piece::Atom { m, .. } | Piece::Block { m, .. } => m,
        }
    }

    pub fn lo(&self) -> f64 {
        match *self {
            Piece::Atom { x, .. } => x,
            Piece::Block { a, .. } => a,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            Piece::Atom { x, .. } => x,
            Piece::Block { b, .. } => b,
        }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo() + self.hi())
    }

    fn shifted(&self, dx: f64) -> Piece {
        match *self {
            Piece::Atom { x, m } => Piece::Atom { x: x + dx, m },
            Piece::Block { a, b, m } => Piece::Block { a: a + dx, b: b + dx, m },
        }
    }
}

/// One linear piece of a quantile function: on cumulative mass `[u0, u1]`
/// the quantile is `q0 + slope (u - u0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSegment {
    pub u0: f64,
    pub u1: f64,
    pub q0: f64,
    pub slope: f64,
}

impl QuantileSegment {
    pub fn at(&self, u: f64) -> f64 {
        self.q0 + self.slope * (u - self.u0)
    }
}

/// Pieces are sorted and do not overlap (an atom may sit on a block endpoint).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineMeasure {
    pieces: Vec<Piece>,
}

impl LineMeasure {
    pub fn new(mut pieces: Vec<Piece>) -> Self {
        pieces.retain(|p| p.mass() > 0.0);
        pieces.sort_by(|p, q| p.lo().total_cmp(&q.lo()).then(p.hi().total_cmp(&q.hi())));
        Self { pieces }
    }

    pub fn atoms(atoms: &[(f64, f64)]) -> Self {
        Self::new(atoms.iter().map(|&(x, m)| Piece::Atom { x, m }).collect())
    }

    /// Atoms at their wrapped positions in `[0, 1)`.
    pub fn from_atomic(mu: &AtomicMeasure) -> Self {
        Self::atoms(mu.atoms())
    }

    /// Blocks as intervals `[c - w/2, c + w/2]`, which may leave `[0, 1)`.
    pub fn from_blocks(mu: &BlockMeasure) -> Self {
        Self::new(
            mu.blocks()
                .iter()
                .map(|b| Piece::Block { a: b.center - 0.5 * b.width, b: b.center + 0.5 * b.width, m: b.mass })
                .collect(),
        )
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(Piece::mass).sum()
    }

    pub fn hull(&self) -> Option<(f64, f64)> {
        let lo = self.pieces.iter().map(Piece::lo).fold(f64::INFINITY, f64::min);
        let hi = self.pieces.iter().map(Piece::hi).fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }

    pub fn barycenter(&self) -> f64 {
        let m = self.total_mass();
        self.pieces.iter().map(|p| p.mass() * p.mean()).sum::<f64>() / m
    }

    pub fn translate(&self, dx: f64) -> Self {
        Self { pieces: self.pieces.iter().map(|p| p.shifted(dx)).collect() }
    }

    pub fn has_blocks(&self) -> bool {
        self.pieces.iter().any(|p| matches!(p, Piece::Block { .. }))
    }

    /// Mass in the closed interval `[lo, hi]`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| match *p {
                Piece::Atom { x, m } => {
                    if x >= lo && x <= hi {
                        m
                    } else {
                        0.0
                    }
                }
                Piece::Block { a, b, m } => m * ((b.min(hi) - a.max(lo)).max(0.0) / (b - a)),
            })
            .sum()
    }

    /// Part of the measure in `[lo, hi)`; with `closed` the right end is included.
    pub fn restrict(&self, lo: f64, hi: f64, closed: bool) -> Self {
        let mut out = Vec::new();
        for p in &self.pieces {
            match *p {
                Piece::Atom { x, m } => {
                    if x >= lo && (x < hi || (closed && x <= hi)) {
                        out.push(Piece::Atom { x, m });
                    }
                }
                Piece::Block { a, b, m } => {
                    let a2 = a.max(lo);
                    let b2 = b.min(hi);
                    if b2 > a2 {
                        out.push(Piece::Block { a: a2, b: b2, m: m * (b2 - a2) / (b - a) });
                    }
                }
            }
        }
        Self { pieces: out }
    }

    pub fn quantile_segments(&self) -> Vec<QuantileSegment> {
        let mut u = 0.0;
        let mut out = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let m = p.mass();
            let (q0, slope) = match *p {
                Piece::Atom { x, .. } => (x, 0.0),
                Piece::Block { a, b, .. } => (a, (b - a) / m),
            };
            out.push(QuantileSegment { u0: u, u1: u + m, q0, slope });
            u += m;
        }
        out
    }

    /// The part of the measure carried by cumulative mass `[u0, u1]`.
    pub fn quantile_slice(&self, u0: f64, u1: f64) -> Self {
        let mut out = Vec::new();
        for seg in self.quantile_segments() {
            let a = seg.u0.max(u0);
            let b = seg.u1.min(u1);
            if b <= a {
                continue;
            }
            if seg.slope == 0.0 {
                out.push(Piece::Atom { x: seg.q0, m: b - a });
            } else {
                out.push(Piece::Block { a: seg.at(a), b: seg.at(b), m: b - a });
            }
        }
        Self { pieces: out }
    }

    /// Quantile function evaluated at cumulative mass `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let segs = self.quantile_segments();
        let i = segs.partition_point(|s| s.u1 < u).min(segs.len() - 1);
        segs[i].at(u.clamp(segs[i].u0, segs[i].u1))
    }

    /// Pushforward by `x -> (1 - lambda) x + lambda T(x)` where `T` is the monotone
    /// map to `other`. Linear quantile pieces stay linear, so the result is exact.
    pub fn interpolate(&self, other: &Self, lambda: f64) -> Result<Self> {
        let merged = merge_segments(self, other)?;
        let mut out = Vec::with_capacity(merged.len());
        for (len, qa, sa, qb, sb) in merged {
            let q0 = (1.0 - lambda) * qa + lambda * qb;
            let slope = (1.0 - lambda) * sa + lambda * sb;
            if slope * len <= 0.0 {
                out.push(Piece::Atom { x: q0, m: len });
            } else {
                out.push(Piece::Block { a: q0, b: q0 + slope * len, m: len });
            }
        }
        Ok(Self::new(out))
    }

    /// Squared quadratic Wasserstein distance on the line.
    pub fn w2_sq(&self, other: &Self) -> Result<f64> {
        let merged = merge_segments(self, other)?;
        Ok(merged
            .into_iter()
            .map(|(len, qa, sa, qb, sb)| {
                let a = qa - qb;
                let b = sa - sb;
                len * (a * a + a * b * len + b * b * len * len / 3.0)
            })
            .sum())
    }
}

/// Common refinement of two quantile functions: `(length, qa, slope_a, qb, slope_b)`
/// per mass interval.
fn merge_segments(x: &LineMeasure, y: &LineMeasure) -> Result<Vec<(f64, f64, f64, f64, f64)>> {
    let (ma, mb) = (x.total_mass(), y.total_mass());
    if (ma - mb).abs() > 1e-12 * ma.max(mb) {
        return Err(Error::UnbalancedMeasures(ma, mb));
    }
    let sa = x.quantile_segments();
    let sb = y.quantile_segments();
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    while i < sa.len() && j < sb.len() {
        let end_a = if i + 1 == sa.len() { f64::INFINITY } else { sa[i].u1 };
        let end_b = if j + 1 == sb.len() { f64::INFINITY } else { sb[j].u1 };
        let end = end_a.min(end_b);
        let end = if end.is_infinite() { sa[i].u1.max(sb[j].u1) } else { end };
        if end > u {
            out.push((end - u, sa[i].at(u), sa[i].slope, sb[j].at(u), sb[j].slope));
            u = end;
        }
        if end_a <= end {
            i += 1;
        }
        if end_b <= end {
            j += 1;
        }
        if end_a.is_infinite() && end_b.is_infinite() {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lebesgue_to_point() {
        let leb = LineMeasure::new(vec![Piece::Block { a: 0.0, b: 1.0, m: 1.0 }]);
        let pt = LineMeasure::atoms(&[(0.5, 1.0)]);
        assert!((leb.w2_sq(&pt).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        let half = leb.interpolate(&pt, 0.5).unwrap();
        assert_eq!(half.pieces(), &[Piece::Block { a: 0.25, b: 0.75, m: 1.0 }]);
    }

    #[test]
    fn block_shift() {
        let a = LineMeasure::new(vec![Piece::Block { a: 0.0, b: 0.5, m: 1.0 }]);
        let b = a.translate(0.3);
        assert!((a.w2_sq(&b).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn slices_and_restrictions() {
        let m = LineMeasure::new(vec![
            Piece::Atom { x: 0.1, m: 0.25 },
            Piece::Block { a: 0.5, b: 1.0, m: 0.75 },
        ]);
        let s = m.quantile_slice(0.125, 0.625);
        assert_eq!(s.pieces()[0], Piece::Atom { x: 0.1, m: 0.125 });
        assert!((s.total_mass() - 0.5).abs() < 1e-15);
        let r = m.restrict(0.0, 0.75, false);
        assert!((r.total_mass() - 0.625).abs() < 1e-15);
        assert!((m.quantile(0.25 + 0.375) - 0.75).abs() < 1e-15);
    }
}
