//! Exact quadratic optimal transport between atomic measures on the line and
//! on the torus.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measure::{wrap, AtomicMeasure, MollifiedMeasure};
use crate::spectral::{hs_norm_sq, spectrum_of_mollified, Spectrum, SourceKind};

/// Order-preserving coupling. On the torus targets are lifted to the real line
/// so that `y - x` is the displacement along the chosen geodesic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonotonePlan {
    pub pairs: Vec<(f64, f64, f64)>,
}

impl Serialize for MonotonePlan {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        self.pairs.serialize(ser)
    }
}

impl MonotonePlan {
    pub fn cost_sq(&self) -> f64 {
        self.pairs.iter().map(|&(x, y, m)| m * (y - x) * (y - x)).sum()
    }

    pub fn is_monotone(&self) -> bool {
        self.pairs.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
    }

    pub fn source(&self) -> Result<AtomicMeasure> {
        AtomicMeasure::canonicalize(&self.pairs.iter().map(|&(x, _, m)| (x, m)).collect::<Vec<_>>())
    }

    /// Pushforward by `(1 - lambda) x + lambda y`, wrapped to the torus.
    pub fn interpolate(&self, lambda: f64) -> Result<AtomicMeasure> {
        AtomicMeasure::canonicalize(
            &self
                .pairs
                .iter()
                .map(|&(x, y, m)| ((1.0 - lambda) * x + lambda * y, m))
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WassersteinResult {
    pub cost_sq: f64,
    pub plan: MonotonePlan,
    /// Mass offset of the optimal cyclic coupling, torus only.
    pub cut: Option<f64>,
    /// Set when some mass travels exactly half way around the torus.
    pub antipodal: bool,
}

fn check_balance(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::UnbalancedMeasures(a, b));
    }
    Ok(a)
}

pub fn w2_line(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<WassersteinResult> {
    check_balance(mu, nu)?;
    let plan = cyclic_plan(mu.atoms(), nu.atoms(), 0.0, mu.total_mass());
    Ok(WassersteinResult { cost_sq: plan.cost_sq(), plan, cut: None, antipodal: false })
}

/// Couples `mu` at cumulative mass `u` with the lifted quantile of `nu` at `u + theta`,
/// where the lift adds one per full turn of mass.
fn cyclic_plan(a: &[(f64, f64)], b: &[(f64, f64)], theta: f64, total: f64) -> MonotonePlan {
    let mut pairs = Vec::with_capacity(a.len() + b.len());
    sweep(a, b, theta, total, |x, y, m| pairs.push((x, y, m)));
    MonotonePlan { pairs }
}

fn cyclic_cost(a: &[(f64, f64)], b: &[(f64, f64)], theta: f64, total: f64) -> f64 {
    let mut acc = 0.0;
    sweep(a, b, theta, total, |x, y, m| acc += m * (y - x) * (y - x));
    acc
}

fn sweep(a: &[(f64, f64)], b: &[(f64, f64)], theta: f64, total: f64, mut emit: impl FnMut(f64, f64, f64)) {
    let q = (theta / total).floor();
    let mut r = theta - q * total;
    let mut lift = q;
    let mut j = 0;
    while j < b.len() && r >= b[j].1 {
        r -= b[j].1;
        j += 1;
    }
    if j == b.len() {
        j = 0;
        lift += 1.0;
        r = 0.0;
    }
    let mut left_b = b[j].1 - r;
    for &(x, ma) in a {
        let mut left_a = ma;
        while left_a > 0.0 {
            let m = left_a.min(left_b);
            if m > 0.0 {
                emit(x, b[j].0 + lift, m);
            }
            left_a -= m;
            left_b -= m;
            if left_b <= 0.0 {
                j += 1;
                if j == b.len() {
                    j = 0;
                    lift += 1.0;
                }
                left_b = b[j].1;
                // Cumulative rounding leaves crumbs far below any physical mass.
                if left_a <= 1e-15 * total {
                    break;
                }
            }
        }
    }
}

/// All cut values where the cyclic cost changes slope, within `[lo, hi]`.
fn breakpoints(a: &[(f64, f64)], b: &[(f64, f64)], total: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut ca = vec![0.0];
    for &(_, m) in a {
        ca.push(ca.last().unwrap() + m);
    }
    let mut cb = vec![0.0];
    for &(_, m) in b {
        cb.push(cb.last().unwrap() + m);
    }
    let mut out = Vec::new();
    for &u in &ca[..a.len()] {
        for &v in &cb[..b.len()] {
            for n in -2..=2 {
                let t = v - u + n as f64 * total;
                if t >= lo && t <= hi {
                    out.push(t);
                }
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

const EXHAUSTIVE_PAIRS: usize = 250_000;

pub fn w2_torus(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<WassersteinResult> {
    let total = check_balance(mu, nu)?;
    let (a, b) = (mu.atoms(), nu.atoms());
    let (lo, hi) = (-1.5 * total, 1.5 * total);
    let f = |t: f64| cyclic_cost(a, b, t, total);
    // The cost is convex and piecewise linear in the cut, so its minimum sits on a breakpoint.
    let theta = if a.len() * b.len() <= EXHAUSTIVE_PAIRS {
        let cands = breakpoints(a, b, total, lo, hi);
        let (mut l, mut h) = (0usize, cands.len() - 1);
        while l < h {
            let mid = (l + h) / 2;
            if f(cands[mid]) <= f(cands[mid + 1]) {
                h = mid;
            } else {
                l = mid + 1;
            }
        }
        let best = f(cands[l]);
        let tol = 1e-14 * best.max(1e-300);
        let mut i = l;
        while i > 0 && f(cands[i - 1]) <= best + tol {
            i -= 1;
        }
        cands[i]
    } else {
        let (mut l, mut h) = (lo, hi);
        for _ in 0..200 {
            let m1 = l + (h - l) / 3.0;
            let m2 = h - (h - l) / 3.0;
            if f(m1) <= f(m2) {
                h = m2;
            } else {
                l = m1;
            }
        }
        0.5 * (l + h)
    };
    let plan = cyclic_plan(a, b, theta, total);
    let antipodal = plan.pairs.iter().any(|&(x, y, _)| ((y - x).abs() - 0.5).abs() <= 1e-12);
    Ok(WassersteinResult {
        cost_sq: plan.cost_sq(),
        plan,
        cut: Some(theta.rem_euclid(total)),
        antipodal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Line,
    Torus,
}

/// McCann interpolant along the optimal plan, with the antipodal flag of the
/// torus coupling.
pub fn mccann_report(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    lambda: f64,
    metric: Metric,
) -> Result<(AtomicMeasure, bool)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let res = match metric {
        Metric::Line => w2_line(mu, nu)?,
        Metric::Torus => w2_torus(mu, nu)?,
    };
    Ok((res.plan.interpolate(lambda)?, res.antipodal))
}

pub fn mccann(mu: &AtomicMeasure, nu: &AtomicMeasure, lambda: f64, metric: Metric) -> Result<AtomicMeasure> {
    mccann_report(mu, nu, lambda, metric).map(|r| r.0)
}

/// Empirical upper Ahlfors constants `(M_lambda, M_0)` of the interpolant and the source.
///
/// `M_0` is taken over the given radii together with the expanded radii
/// `min(2r / (1 - lambda), 1/2)`, which is where the source mass of a ball
/// around an interpolant point can come from.
pub fn displacement_ahlfors(
    plan: &MonotonePlan,
    lambda: f64,
    alpha: f64,
    radii: &[f64],
) -> Result<(f64, f64)> {
    if !plan.is_monotone() {
        let i = plan
            .pairs
            .windows(2)
            .position(|w| !(w[0].0 <= w[1].0 && w[0].1 <= w[1].1))
            .unwrap_or(0);
        return Err(Error::NotMonotone(format!("pairs {i} and {}", i + 1)));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside (0, 1)")));
    }
    let src = plan.source()?;
    let mid = plan.interpolate(lambda)?;
    let mut src_radii: Vec<f64> = radii.to_vec();
    src_radii.extend(radii.iter().map(|&r| (2.0 * r / (1.0 - lambda)).min(0.5)));
    let sup = |m: &AtomicMeasure, rs: &[f64]| -> f64 {
        let mut best: f64 = 0.0;
        for &r in rs {
            for x in m.positions() {
                best = best.max(m.ball_mass(x, r) / r.powf(alpha));
            }
        }
        best
    };
    Ok((sup(&mid, radii), sup(&src, &src_radii)))
}

/// Discretizes a mollified density to `grid` cell-center atoms.
fn discretize(m: &MollifiedMeasure, grid: usize) -> Result<AtomicMeasure> {
    let h = 1.0 / grid as f64;
    let raw: Vec<(f64, f64)> = (0..grid)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            (x, m.eval(x) * h)
        })
        .filter(|a| a.1 > 0.0)
        .collect();
    let mass: f64 = raw.iter().map(|a| a.1).sum();
    let scale = m.total_mass() / mass;
    AtomicMeasure::canonicalize(&raw.into_iter().map(|(x, w)| (x, w * scale)).collect::<Vec<_>>())
}

/// Compares the `H^{-1}` distance of two mollified measures with
/// `max(sup density)^{1/2} * W_per`.
///
/// The dual norm is taken against gradients, `||f||_{-1} = sup <f, g> / ||g'||_2`,
/// so the spectral sum is divided by `(2 pi)^2`.
pub fn loeper_check(mu: &MollifiedMeasure, nu: &MollifiedMeasure, grid: usize) -> Result<(f64, f64)> {
    let eps = mu.epsilon.min(nu.epsilon);
    let k = ((crate::measure::HAT_CUTOFF / eps).ceil() as usize).max(16);
    let a = spectrum_of_mollified(mu, k, false);
    let b = spectrum_of_mollified(nu, k, false);
    let diff: Vec<_> = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x - y).collect();
    let sp = Spectrum::from_coeffs(diff, SourceKind::Mollified);
    let norm = hs_norm_sq(&sp, 1.0)?;
    let lhs = norm.value.sqrt() / (2.0 * std::f64::consts::PI);
    if lhs == 0.0 {
        return Ok((0.0, 0.0));
    }
    let sup = mu.sup_density(grid).max(nu.sup_density(grid));
    let w = w2_torus(&discretize(mu, grid)?, &discretize(nu, grid)?)?.cost_sq.sqrt();
    Ok((lhs, sup.sqrt() * w))
}

/// Line points of the torus plan, rewrapped so sources lie in `[0, 1)`.
pub fn wrap_plan(plan: &MonotonePlan) -> MonotonePlan {
    MonotonePlan {
        pairs: plan
            .pairs
            .iter()
            .map(|&(x, y, m)| {
                let s = wrap(x);
                (s, y + (s - x), m)
            })
            .collect(),
    }
}
