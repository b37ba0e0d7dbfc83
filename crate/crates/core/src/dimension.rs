//! Dimension and regularity estimates for boundary measures, and the exact
//! algebra of the scaling exponents.

use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::measure::Measure;
use crate::spectral::spectrum_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AhlforsEstimate {
    /// Slope of log extremal ball mass against log radius.
    pub alpha: f64,
    /// `max mass / r^alpha` over support points and radii, at the fitted `alpha`.
    pub m_upper: f64,
    /// `min mass / r^alpha` at the fitted `alpha`.
    pub m_lower: f64,
    pub radii_used: Vec<f64>,
    pub r_min: f64,
    pub direction: Direction,
    /// `(alpha, M(alpha))` over the requested grid, in the fitted direction.
    pub constants: Vec<(f64, f64)>,
    pub r_squared: f64,
}

/// Dyadic radii `2^{-j}` for `j` in `lo..=hi`.
pub fn dyadic_radii(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|j| 0.5f64.powi(j as i32)).collect()
}

pub fn ahlfors_fit(mu: &Measure, direction: Direction, radii: &[f64], alpha_grid: &[f64]) -> Result<AhlforsEstimate> {
    let points = mu.support_points();
    if points.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if radii.len() < 2 || radii.iter().any(|&r| !(r > 0.0 && r <= 0.5)) {
        return Err(Error::InvalidParameter("need at least two radii in (0, 1/2]".into()));
    }
    // masses[i][j]: mass of the ball of radius radii[i] around points[j].
    let masses: Vec<Vec<f64>> =
        radii.par_iter().map(|&r| points.iter().map(|&x| mu.ball_mass(x, r)).collect()).collect();
    let extremal = |row: &[f64]| match direction {
        Direction::Upper => row.iter().cloned().fold(0.0, f64::max),
        Direction::Lower => row.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = masses.iter().map(|row| extremal(row).ln()).collect();
    let fit = LinearFit::new(&xs, &ys)?;
    let ratio = |a: f64, pick_max: bool| {
        let it = masses.iter().zip(radii).flat_map(|(row, &r)| row.iter().map(move |m| m / r.powf(a)));
        if pick_max {
            it.fold(0.0, f64::max)
        } else {
            it.fold(f64::INFINITY, f64::min)
        }
    };
    let alpha = fit.slope;
    Ok(AhlforsEstimate {
        alpha,
        m_upper: ratio(alpha, true),
        m_lower: ratio(alpha, false),
        radii_used: radii.to_vec(),
        r_min: radii.iter().cloned().fold(f64::INFINITY, f64::min),
        direction,
        constants: alpha_grid.iter().map(|&a| (a, ratio(a, direction == Direction::Upper))).collect(),
        r_squared: fit.r_squared,
    })
}

/// Number of dyadic intervals of length `2^{-j}` carrying positive mass.
pub fn occupied_cells(mu: &Measure, j: u32) -> usize {
    let n = 1u64 << j;
    let h = 1.0 / n as f64;
    let mut cells: Vec<u64> = match mu {
        Measure::Atomic(a) => a.positions().map(|x| ((x / h).floor() as u64).min(n - 1)).collect(),
        Measure::Block(b) => b
            .blocks()
            .iter()
            .flat_map(|bl| {
                // Blocks may wrap; walk the covered cells of the unwrapped span.
                let lo = ((bl.center - 0.5 * bl.width) / h).floor() as i64;
                let hi = ((bl.center + 0.5 * bl.width) / h).ceil() as i64;
                (lo..hi).map(move |c| c.rem_euclid(n as i64) as u64)
            })
            .collect(),
    };
    cells.sort_unstable();
    cells.dedup();
    cells.len()
}

/// Box-counting slope over dyadic depths.
pub fn box_dimension(mu: &Measure, depths: &[u32]) -> Result<f64> {
    let xs: Vec<f64> = depths.iter().map(|&j| j as f64 * std::f64::consts::LN_2).collect();
    let ys: Vec<f64> = depths.iter().map(|&j| (occupied_cells(mu, j) as f64).ln()).collect();
    Ok(LinearFit::new(&xs, &ys)?.slope)
}

/// Growth of the truncated norm over the doubling range above which a sum is
/// declared divergent.
pub const DIVERGENCE_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrostmanPoint {
    pub gamma: f64,
    /// Truncated norm at the largest order, or `None` when flagged divergent.
    pub norm: Option<f64>,
    /// Truncated norm at the largest order over the one at the smallest.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrostmanProxy {
    pub points: Vec<FrostmanPoint>,
    /// `d - 2 gamma*` with `gamma*` the largest divergent grid value, zero if none.
    pub dimension_estimate: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub threshold: f64,
}

/// Checks `||mu - 1||_{H^{-gamma}}` for divergence by doubling the truncation
/// from `k_min` to `k_max` (both powers of two).
pub fn frostman_proxy(mu: &Measure, gamma_grid: &[f64], k_min: usize, k_max: usize) -> Result<FrostmanProxy> {
    if !(k_min.is_power_of_two() && k_max.is_power_of_two() && k_min < k_max) {
        return Err(Error::InvalidParameter("truncations must be increasing powers of two".into()));
    }
    let sp = spectrum_of(mu, k_max, true);
    let power: Vec<f64> = sp.coeffs().iter().map(|c| c.norm_sqr()).collect();
    let points: Vec<FrostmanPoint> = gamma_grid
        .par_iter()
        .map(|&gamma| {
            let mut acc = 0.0;
            let mut at_min = 0.0;
            for (k, p) in power.iter().enumerate().skip(1) {
                acc += 2.0 * (k as f64).powf(-2.0 * gamma) * p;
                if k == k_min {
                    at_min = acc;
                }
            }
            // Identically zero sums (Lebesgue) are finite.
            let growth = if at_min > 0.0 { acc / at_min } else { 1.0 };
            let norm = (growth <= DIVERGENCE_RATIO).then_some(acc);
            FrostmanPoint { gamma, norm, growth }
        })
        .collect();
    let worst = points.iter().filter(|p| p.norm.is_none()).map(|p| p.gamma).fold(0.0, f64::max);
    Ok(FrostmanProxy {
        points,
        dimension_estimate: (1.0 - 2.0 * worst).clamp(0.0, 1.0),
        k_min,
        k_max,
        threshold: DIVERGENCE_RATIO,
    })
}

fn ser_rational<S: Serializer>(q: &BigRational, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&q.to_string())
}

fn ser_opt_rational<S: Serializer>(q: &Option<BigRational>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    match q {
        Some(q) => ser.serialize_some(&q.to_string()),
        None => ser.serialize_none(),
    }
}

/// Scaling exponents in exact arithmetic; serialized as `p/q` strings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentTable {
    #[serde(serialize_with = "ser_rational")]
    pub s: BigRational,
    pub d: u32,
    #[serde(serialize_with = "ser_rational")]
    pub alpha_bar: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub beta_c: BigRational,
    #[serde(serialize_with = "ser_opt_rational")]
    pub beta_reg: Option<BigRational>,
    #[serde(serialize_with = "ser_opt_rational")]
    pub beta_con: Option<BigRational>,
    /// The `beta` the dimension bounds are evaluated at: the supplied one, else `beta_c`.
    #[serde(serialize_with = "ser_rational")]
    pub beta: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub dim_lower_bound: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub dim_upper_bound: BigRational,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational value of a finite float.
pub fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::InvalidParameter(format!("{x} is not finite")))
}

/// `beta_c(s, d) = (d + 2s) / (3d + 2(1 - s))`.
pub fn beta_c(s: &BigRational, d: u32) -> BigRational {
    let d = BigRational::from_integer(d.into());
    let two = rat(2, 1);
    let one = BigRational::one();
    (&d + &two * s) / (rat(3, 1) * &d + &two * (one - s))
}

/// Lower dimension bound `d - 2s + 2 beta / (1 + beta)`.
pub fn dim_lower_bound(s: &BigRational, d: u32, beta: &BigRational) -> BigRational {
    let one = BigRational::one();
    BigRational::from_integer(d.into()) - rat(2, 1) * s + rat(2, 1) * beta / (one + beta)
}

/// Upper dimension bound `2d (1 - beta) / (1 + beta)`.
pub fn dim_upper_bound(d: u32, beta: &BigRational) -> BigRational {
    let one = BigRational::one();
    rat(2 * d as i64, 1) * (&one - beta) / (one + beta)
}

/// Conjectured boundary dimension: the common value of the two bounds at
/// `beta_c`, capped at `d`. In one dimension this is `min(4(1 - s)/3, 1)`.
pub fn alpha_bar(s: &BigRational, d: u32) -> BigRational {
    let v = dim_lower_bound(s, d, &beta_c(s, d));
    let cap = BigRational::from_integer(d.into());
    if v > cap {
        cap
    } else {
        v
    }
}

/// `beta_reg(s, alpha) = (2s - 1 + alpha) / (2(1 - s) + 1 - alpha)`, valid for `alpha > 1 - 2s`.
pub fn beta_reg(s: &BigRational, alpha: &BigRational) -> Result<BigRational> {
    let one = BigRational::one();
    let two = rat(2, 1);
    if *alpha <= &one - &two * s {
        return Err(Error::OutOfValidity(format!("alpha = {alpha} <= 1 - 2s = {}", &one - &two * s)));
    }
    Ok((&two * s - &one + alpha) / (&two * (&one - s) + &one - alpha))
}

/// `beta_con(alpha) = (2 - alpha) / (2 + alpha)`.
pub fn beta_con(alpha: &BigRational) -> BigRational {
    (rat(2, 1) - alpha) / (rat(2, 1) + alpha)
}

pub fn exponent_table(
    s: &BigRational,
    d: u32,
    alpha: Option<&BigRational>,
    beta: Option<&BigRational>,
) -> Result<ExponentTable> {
    let one = BigRational::one();
    let zero = BigRational::zero();
    if *s <= zero || *s >= one {
        return Err(Error::InvalidParameter(format!("s = {s} outside (0, 1)")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be positive".into()));
    }
    if let Some(a) = alpha {
        if *a <= zero || *a > BigRational::from_integer(d.into()) {
            return Err(Error::InvalidParameter(format!("alpha = {a} outside (0, d]")));
        }
    }
    if let Some(b) = beta {
        if *b <= zero || *b >= one {
            return Err(Error::InvalidParameter(format!("beta = {b} outside (0, 1)")));
        }
    }
    let bc = beta_c(s, d);
    let b = beta.cloned().unwrap_or_else(|| bc.clone());
    Ok(ExponentTable {
        s: s.clone(),
        d,
        alpha_bar: alpha_bar(s, d),
        beta_reg: alpha.map(|a| beta_reg(s, a)).transpose()?,
        beta_con: alpha.map(beta_con),
        dim_lower_bound: dim_lower_bound(s, d, &b),
        dim_upper_bound: dim_upper_bound(d, &b),
        beta: b,
        beta_c: bc,
    })
}
