//! Finite positive measures on the unit torus: atoms, uniform blocks and
//! mollifications of either.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions closer than this after wrapping are the same point.
pub const SNAP: f64 = 1e-15;

/// Wraps a real number into `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 - SNAP {
        0.0
    } else {
        y
    }
}

/// Signed periodic difference `a - b` reduced to `[-1/2, 1/2)`.
pub fn periodic_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - (d + 0.5).floor()
}

pub fn torus_dist(a: f64, b: f64) -> f64 {
    periodic_diff(a, b).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
    total: f64,
}

impl AtomicMeasure {
    pub fn canonicalize(raw: &[(f64, f64)]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let mut atoms = Vec::with_capacity(raw.len());
        for &(x, m) in raw {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidMass(m));
            }
            if !x.is_finite() {
                return Err(Error::InvalidParameter(format!("atom position {x}")));
            }
            atoms.push((wrap(x), m));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            match merged.last_mut() {
                Some(last) if x - last.0 <= SNAP => last.1 += m,
                _ => merged.push((x, m)),
            }
        }
        let total = merged.iter().map(|a| a.1).sum();
        Ok(Self { atoms: merged, total })
    }

    pub fn dirac(x: f64) -> Self {
        Self::canonicalize(&[(x, 1.0)]).expect("unit atom")
    }

    /// `n` atoms of mass `1/n` at `(i + offset)/n`.
    pub fn equispaced(n: usize, offset: f64) -> Self {
        let m = 1.0 / n as f64;
        let raw: Vec<_> = (0..n).map(|i| ((i as f64 + offset) * m, m)).collect();
        Self::canonicalize(&raw).expect("equispaced atoms")
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    pub fn pushforward(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw: Vec<_> = self.atoms.iter().map(|&(x, m)| (f(x), m)).collect();
        Self::canonicalize(&raw)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let raw: Vec<_> = self.atoms.iter().map(|&(x, m)| (x, m * factor)).collect();
        Self::canonicalize(&raw)
    }

    pub fn ball_mass(&self, x: f64, r: f64) -> f64 {
        if r >= 0.5 {
            return self.total;
        }
        self.atoms
            .iter()
            .filter(|a| torus_dist(a.0, x) <= r + SNAP)
            .map(|a| a.1)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub center: f64,
    pub width: f64,
    pub mass: f64,
}

impl Block {
    pub fn density(&self) -> f64 {
        self.mass / self.width
    }

    /// Mass inside the line interval `[lo, hi]`, counting all periodic images.
    fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        let a = self.center - 0.5 * self.width;
        let b = self.center + 0.5 * self.width;
        let mut len = 0.0;
        for n in -2..=2 {
            let s = n as f64;
            len += ((b + s).min(hi) - (a + s).max(lo)).max(0.0);
        }
        len.min(self.width) * self.density()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct BlockMeasure {
    blocks: Vec<Block>,
    total: f64,
}

impl BlockMeasure {
    /// Blocks may touch but not overlap; touching is decided with a `1e-12` slack.
    pub fn new(mut blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for b in &mut blocks {
            if !(b.mass > 0.0) || !b.mass.is_finite() {
                return Err(Error::InvalidMass(b.mass));
            }
            if !(b.width > 0.0) || b.width > 1.0 + 1e-12 {
                return Err(Error::InvalidParameter(format!("block width {}", b.width)));
            }
            b.width = b.width.min(1.0);
            b.center = wrap(b.center);
        }
        blocks.sort_by(|a, b| a.center.total_cmp(&b.center));
        let n = blocks.len();
        let total_width: f64 = blocks.iter().map(|b| b.width).sum();
        if total_width > 1.0 + 1e-12 {
            return Err(Error::OverlappingBlocks(format!("total width {total_width}")));
        }
        if n > 1 {
            for i in 0..n {
                let a = blocks[i];
                let b = blocks[(i + 1) % n];
                let mut gap = b.center - a.center;
                if i + 1 == n {
                    gap += 1.0;
                }
                if gap + 1e-12 < 0.5 * (a.width + b.width) {
                    return Err(Error::OverlappingBlocks(format!(
                        "blocks at {} and {}",
                        a.center, b.center
                    )));
                }
            }
        }
        let total = blocks.iter().map(|b| b.mass).sum();
        Ok(Self { blocks, total })
    }

    pub fn lebesgue() -> Self {
        Self::new(vec![Block { center: 0.5, width: 1.0, mass: 1.0 }]).expect("lebesgue")
    }

    /// `n` equispaced blocks of width `r` and mass `1/n` centered at `(i + 1/2)/n`.
    pub fn uniform_grid(n: usize, r: f64) -> Result<Self> {
        if r > 1.0 / n as f64 + 1e-12 {
            return Err(Error::OverlappingBlocks(format!("width {r} exceeds spacing 1/{n}")));
        }
        let m = 1.0 / n as f64;
        Self::new(
            (0..n)
                .map(|i| Block { center: (i as f64 + 0.5) * m, width: r.min(m), mass: m })
                .collect(),
        )
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn ball_mass(&self, x: f64, r: f64) -> f64 {
        if r >= 0.5 {
            return self.total;
        }
        self.blocks.iter().map(|b| b.mass_in(x - r, x + r)).sum()
    }
}

/// Either kind of base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub enum Measure {
    Atomic(AtomicMeasure),
    Block(BlockMeasure),
}

impl Measure {
    pub fn total_mass(&self) -> f64 {
        match self {
            Measure::Atomic(m) => m.total_mass(),
            Measure::Block(m) => m.total_mass(),
        }
    }

    pub fn ball_mass(&self, x: f64, r: f64) -> f64 {
        match self {
            Measure::Atomic(m) => m.ball_mass(x, r),
            Measure::Block(m) => m.ball_mass(x, r),
        }
    }

    /// Atom positions, or block endpoints and centers.
    pub fn support_points(&self) -> Vec<f64> {
        match self {
            Measure::Atomic(m) => m.positions().collect(),
            Measure::Block(m) => m
                .blocks()
                .iter()
                .flat_map(|b| {
                    [b.center - 0.5 * b.width, b.center, b.center + 0.5 * b.width].map(wrap)
                })
                .collect(),
        }
    }
}

impl From<AtomicMeasure> for Measure {
    fn from(m: AtomicMeasure) -> Self {
        Measure::Atomic(m)
    }
}

impl From<BlockMeasure> for Measure {
    fn from(m: BlockMeasure) -> Self {
        Measure::Block(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MeasureRepr {
    Atomic { atoms: Vec<(f64, f64)> },
    Block { blocks: Vec<(f64, f64, f64)> },
}

impl TryFrom<MeasureRepr> for Measure {
    type Error = Error;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        match r {
            MeasureRepr::Atomic { atoms } => Ok(Measure::Atomic(AtomicMeasure::canonicalize(&atoms)?)),
            MeasureRepr::Block { blocks } => Ok(Measure::Block(BlockMeasure::new(
                blocks
                    .into_iter()
                    .map(|(center, width, mass)| Block { center, width, mass })
                    .collect(),
            )?)),
        }
    }
}

impl From<Measure> for MeasureRepr {
    fn from(m: Measure) -> Self {
        match m {
            Measure::Atomic(a) => MeasureRepr::Atomic { atoms: a.atoms },
            Measure::Block(b) => MeasureRepr::Block {
                blocks: b.blocks.iter().map(|b| (b.center, b.width, b.mass)).collect(),
            },
        }
    }
}

impl TryFrom<MeasureRepr> for AtomicMeasure {
    type Error = Error;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        match Measure::try_from(r)? {
            Measure::Atomic(a) => Ok(a),
            Measure::Block(_) => Err(Error::InvalidParameter("expected an atomic measure".into())),
        }
    }
}

impl From<AtomicMeasure> for MeasureRepr {
    fn from(m: AtomicMeasure) -> Self {
        Measure::Atomic(m).into()
    }
}

impl TryFrom<MeasureRepr> for BlockMeasure {
    type Error = Error;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        match Measure::try_from(r)? {
            Measure::Block(b) => Ok(b),
            Measure::Atomic(_) => Err(Error::InvalidParameter("expected a block measure".into())),
        }
    }
}

impl From<BlockMeasure> for MeasureRepr {
    fn from(m: BlockMeasure) -> Self {
        Measure::Block(m).into()
    }
}

const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

fn gauss8(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    GL8.iter().map(|&(x, w)| w * (f(c - h * x) + f(c + h * x))).sum::<f64>() * h
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

const CDF_PANELS: usize = 1 << 13;
const HAT_NODES: usize = 4096;
/// Beyond this frequency the kernel transform is below `1e-15` and treated as zero.
pub const HAT_CUTOFF: f64 = 160.0;

/// The normalized bump `rho_1(x) = c exp(-1/(1 - x^2))` on `(-1, 1)`, with its
/// cumulative distribution and cosine transform.
pub struct Kernel {
    norm: f64,
    cdf: Vec<f64>,
    hat_weights: Vec<f64>,
    envelope: (f64, f64),
}

impl Kernel {
    pub fn get() -> &'static Kernel {
        static K: OnceLock<Kernel> = OnceLock::new();
        K.get_or_init(Kernel::build)
    }

    fn build() -> Kernel {
        let h = 2.0 / CDF_PANELS as f64;
        let mut cdf = Vec::with_capacity(CDF_PANELS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 0..CDF_PANELS {
            let a = -1.0 + i as f64 * h;
            acc += gauss8(bump, a, a + h);
            cdf.push(acc);
        }
        let z = acc;
        for v in &mut cdf {
            *v /= z;
        }
        let norm = 1.0 / z;
        let hh = 1.0 / HAT_NODES as f64;
        let hat_weights = (0..=HAT_NODES)
            .map(|i| {
                let w = if i == 0 || i == HAT_NODES { 0.5 } else { 1.0 };
                2.0 * w * hh * norm * bump(i as f64 * hh)
            })
            .collect();
        let mut k = Kernel { norm, cdf, hat_weights, envelope: (1.0, 0.0) };
        k.envelope = k.fit_envelope();
        k
    }

    pub fn rho(&self, x: f64) -> f64 {
        self.norm * bump(x)
    }

    /// `R(z) = integral of rho_1 over (-1, z)`, cubic Hermite on a fine table.
    pub fn cdf(&self, z: f64) -> f64 {
        if z <= -1.0 {
            return 0.0;
        }
        if z >= 1.0 {
            return 1.0;
        }
        let h = 2.0 / CDF_PANELS as f64;
        let u = (z + 1.0) / h;
        let i = (u.floor() as usize).min(CDF_PANELS - 1);
        let s = u - i as f64;
        let x0 = -1.0 + i as f64 * h;
        let (y0, y1) = (self.cdf[i], self.cdf[i + 1]);
        let (d0, d1) = (self.rho(x0) * h, self.rho(x0 + h) * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }

    /// `integral rho_1(x) cos(2 pi xi x) dx`; zero past [`HAT_CUTOFF`].
    pub fn hat(&self, xi: f64) -> f64 {
        let xi = xi.abs();
        if xi > HAT_CUTOFF {
            return 0.0;
        }
        let theta = 2.0 * std::f64::consts::PI * xi / HAT_NODES as f64;
        let (s, c) = theta.sin_cos();
        let (mut re, mut im) = (1.0, 0.0);
        let mut acc = 0.0;
        for (i, w) in self.hat_weights.iter().enumerate() {
            if i % 256 == 0 {
                let (si, ci) = (theta * i as f64).sin_cos();
                re = ci;
                im = si;
            }
            acc += w * re;
            let nr = re * c - im * s;
            im = re * s + im * c;
            re = nr;
        }
        acc
    }

    /// `(A, b)` with `|hat(xi)| <= A exp(-b sqrt(xi))` on the sampled range.
    pub fn envelope(&self) -> (f64, f64) {
        self.envelope
    }

    fn fit_envelope(&self) -> (f64, f64) {
        let samples: Vec<(f64, f64)> = (1..=(HAT_CUTOFF as usize * 4))
            .map(|j| {
                let xi = j as f64 * 0.25;
                (xi, self.hat(xi).abs().max(1e-300))
            })
            .collect();
        // Slope from the two decades of the range where values are well above roundoff.
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|p| p.1 > 1e-14)
            .map(|&(xi, v)| (xi.sqrt(), v.ln()))
            .collect();
        let b = if pts.len() >= 2 {
            let (x0, y0) = pts[0];
            let (x1, y1) = pts[pts.len() - 1];
            -(y1 - y0) / (x1 - x0)
        } else {
            1.0
        };
        let b = b.max(0.0) * 0.9;
        let a = samples
            .iter()
            .map(|&(xi, v)| v * (b * xi.sqrt()).exp())
            .fold(1.0_f64, f64::max);
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifiedMeasure {
    pub base: Measure,
    pub epsilon: f64,
}

impl MollifiedMeasure {
    pub fn new(base: Measure, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidScale(epsilon));
        }
        Ok(Self { base, epsilon })
    }

    pub fn total_mass(&self) -> f64 {
        self.base.total_mass()
    }

    /// Density of the periodic convolution `rho_eps * base` at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = Kernel::get();
        let e = self.epsilon;
        match &self.base {
            Measure::Atomic(a) => a
                .atoms()
                .iter()
                .map(|&(y, m)| m * k.rho(periodic_diff(x, y) / e) / e)
                .sum(),
            Measure::Block(b) => b
                .blocks()
                .iter()
                .map(|bl| {
                    let lo = bl.center - 0.5 * bl.width;
                    let hi = bl.center + 0.5 * bl.width;
                    let d = periodic_diff(x, bl.center);
                    let x0 = bl.center + d;
                    let mut acc = 0.0;
                    for n in -2..=2 {
                        let xs = x0 - n as f64;
                        acc += k.cdf((xs - lo) / e) - k.cdf((xs - hi) / e);
                    }
                    acc * bl.density()
                })
                .sum(),
        }
    }

    /// Supremum of the density, sampled on `grid` points plus the atoms and block edges.
    pub fn sup_density(&self, grid: usize) -> f64 {
        let mut pts: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) / grid as f64).collect();
        pts.extend(self.base.support_points());
        pts.iter().map(|&x| self.eval(x)).fold(0.0, f64::max)
    }
}

/// `mollify_eval`: validates the scale and evaluates the density.
pub fn mollify_eval(m: &MollifiedMeasure, x: f64) -> Result<f64> {
    if !(m.epsilon > 0.0 && m.epsilon < 0.5) {
        return Err(Error::InvalidScale(m.epsilon));
    }
    Ok(m.eval(x))
}

pub fn ball_mass(mu: &Measure, x: f64, r: f64) -> f64 {
    mu.ball_mass(x, r)
}
