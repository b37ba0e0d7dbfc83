//! Fourier coefficients of measures on the torus and negative Sobolev norms.

use num::complex::Complex64;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measure::{Kernel, Measure, MollifiedMeasure, HAT_CUTOFF};
use crate::series::{decreasing_tail, power_tail};

const TAU: f64 = 2.0 * std::f64::consts::PI;
const CHUNK: usize = 1024;
/// Beyond this many atoms the pairwise tail certificate is replaced by the crude bound.
const PAIRWISE_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Atomic,
    Block,
    Mollified,
}

/// What is known about coefficients beyond the truncation order.
#[derive(Debug, Clone, PartialEq)]
enum TailModel {
    /// `|c_k|^2` averages to `mean_sq`; oscillating cross terms are bounded by `cross`.
    Atomic { mean_sq: f64, cross: Option<f64>, mass: f64 },
    /// `|c_k| <= min(2 mass, decay / k)`.
    Block { mass: f64, decay: f64 },
    /// `|c_k| <= mass |hat(k eps)|`.
    Mollified { mass: f64, eps: f64 },
}

/// Coefficients `c_k = integral exp(2 pi i k x) d sigma` for `k = 0..=K`; negative
/// orders follow from Hermitian symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
    kind: SourceKind,
    tail: TailModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub tail: f64,
    pub k: usize,
    pub infinite: bool,
}

impl NormReport {
    pub fn interval(&self) -> (f64, f64) {
        (self.value - self.tail, self.value + self.tail)
    }
}

impl Serialize for NormReport {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("NormReport", 4)?;
        if self.infinite {
            st.serialize_field("value", &Option::<f64>::None)?;
        } else {
            st.serialize_field("value", &self.value)?;
        }
        st.serialize_field("tail", &self.tail)?;
        st.serialize_field("K", &self.k)?;
        st.serialize_field("infinite", &self.infinite)?;
        st.end()
    }
}

/// `sin(pi y)` with exact zeros at integers.
pub fn sin_pi(y: f64) -> f64 {
    let r = y.rem_euclid(2.0);
    if r == 0.0 || r == 1.0 {
        return 0.0;
    }
    (std::f64::consts::PI * r).sin()
}

fn phase(k: usize, x: f64) -> Complex64 {
    let t = (k as f64 * x).fract();
    let (s, c) = (TAU * t).sin_cos();
    Complex64::new(c, s)
}

/// `sum_j m_j exp(2 pi i k x_j)` for `k = 0..=K`, by per-chunk phase recurrences.
pub fn atomic_coefficients(atoms: &[(f64, f64)], k_max: usize) -> Vec<Complex64> {
    let n = k_max + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
        let k0 = ci * CHUNK;
        for &(x, m) in atoms {
            let step = phase(1, x);
            let mut z = phase(k0, x) * m;
            for (i, c) in chunk.iter_mut().enumerate() {
                if i > 0 && i % 128 == 0 {
                    z = phase(k0 + i, x) * m;
                }
                *c += z;
                z *= step;
            }
        }
    });
    out
}

fn block_coefficients(mu: &crate::measure::BlockMeasure, k_max: usize) -> Vec<Complex64> {
    (0..=k_max)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                return Complex64::new(mu.total_mass(), 0.0);
            }
            mu.blocks()
                .iter()
                .map(|b| {
                    let arg = k as f64 * b.width;
                    let sinc = sin_pi(arg) / (std::f64::consts::PI * arg);
                    phase(k, b.center) * (b.mass * sinc)
                })
                .sum()
        })
        .collect()
}

fn pairwise_cross(atoms: &[(f64, f64)]) -> Option<f64> {
    if atoms.len() > PAIRWISE_LIMIT {
        return None;
    }
    let mut acc = 0.0;
    for (i, &(xi, mi)) in atoms.iter().enumerate() {
        for &(xj, mj) in &atoms[i + 1..] {
            acc += 2.0 * mi * mj / sin_pi(xj - xi).abs();
        }
    }
    Some(acc)
}

impl Spectrum {
    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        let c = self.coeffs[k.unsigned_abs() as usize];
        if k < 0 {
            c.conj()
        } else {
            c
        }
    }

    /// A spectrum given directly by coefficients, treated as atomic-like with no tail.
    pub fn from_coeffs(coeffs: Vec<Complex64>, kind: SourceKind) -> Self {
        Self {
            coeffs,
            kind,
            tail: TailModel::Atomic { mean_sq: 0.0, cross: Some(0.0), mass: 0.0 },
        }
    }

    pub fn is_centered(&self) -> bool {
        self.coeffs[0].norm() <= 1e-12
    }

    /// `sum_{0 < |k| <= K} |k|^{-2s} |c_k|^2`.
    pub fn truncated_norm_sq(&self, s: f64) -> f64 {
        2.0 * self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| (k as f64).powf(-2.0 * s) * c.norm_sqr())
            .sum::<f64>()
    }

    /// `sum_{k != 0} |c_k|^2` over the stored orders.
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.coeffs.iter().skip(1).map(|c| c.norm_sqr()).sum::<f64>()
    }
}

pub fn spectrum_of(mu: &Measure, k_max: usize, centered: bool) -> Spectrum {
    let mut sp = match mu {
        Measure::Atomic(a) => Spectrum {
            coeffs: atomic_coefficients(a.atoms(), k_max),
            kind: SourceKind::Atomic,
            tail: TailModel::Atomic {
                mean_sq: a.atoms().iter().map(|p| p.1 * p.1).sum(),
                cross: pairwise_cross(a.atoms()),
                mass: a.total_mass(),
            },
        },
        Measure::Block(b) => Spectrum {
            coeffs: block_coefficients(b, k_max),
            kind: SourceKind::Block,
            tail: TailModel::Block {
                mass: b.total_mass(),
                decay: b
                    .blocks()
                    .iter()
                    .map(|bl| bl.mass / (std::f64::consts::PI * bl.width))
                    .sum(),
            },
        },
    };
    if centered {
        sp.coeffs[0] -= 1.0;
    }
    sp
}

pub fn spectrum_of_mollified(mu: &MollifiedMeasure, k_max: usize, centered: bool) -> Spectrum {
    let kern = Kernel::get();
    let eps = mu.epsilon;
    // Orders past the transform cutoff are exactly zero, so skip computing them.
    let live = ((HAT_CUTOFF / eps).floor() as usize).min(k_max);
    let base = spectrum_of(&mu.base, live, false);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); k_max + 1];
    coeffs[..=live]
        .par_iter_mut()
        .enumerate()
        .for_each(|(k, c)| *c = base.coeffs[k] * kern.hat(k as f64 * eps));
    if centered {
        coeffs[0] -= 1.0;
    }
    Spectrum {
        coeffs,
        kind: SourceKind::Mollified,
        tail: TailModel::Mollified { mass: mu.total_mass(), eps },
    }
}

/// Squared homogeneous `H^{-s}` norm of a centered spectrum.
///
/// For atomic sources the value includes the average tail `sum_j m_j^2 * sum_{|k|>K} |k|^{-2s}`,
/// and `tail` bounds the remaining oscillatory part; other sources report the
/// truncated sum with a one-sided tail bound.
pub fn hs_norm_sq(sigma: &Spectrum, s: f64) -> Result<NormReport> {
    if !sigma.is_centered() {
        return Err(Error::NotCentered(sigma.coeffs[0].re));
    }
    let k = sigma.k_max();
    let p = 2.0 * s;
    let truncated = sigma.truncated_norm_sq(s);
    let report = |value, tail| NormReport { value, tail, k, infinite: false };
    match sigma.tail {
        TailModel::Atomic { mean_sq, cross, mass } => {
            if mean_sq == 0.0 {
                return Ok(report(truncated, 0.0));
            }
            if s <= 0.5 {
                return Ok(NormReport { value: f64::INFINITY, tail: f64::INFINITY, k, infinite: true });
            }
            let (t, em_err) = power_tail(p, k as u64);
            let tail = match cross {
                Some(c) => 2.0 * c * ((k + 1) as f64).powf(-p) + 2.0 * mean_sq * em_err,
                None => 2.0 * mass * mass * t,
            };
            Ok(report(truncated + 2.0 * mean_sq * t, tail))
        }
        TailModel::Block { mass, decay } => {
            let cap = 2.0 * mass;
            let g = |x: f64| x.powf(-p) * (cap.min(decay / x)).powi(2);
            let tail = 2.0 * decreasing_tail(g, k as u64);
            Ok(report(truncated, tail))
        }
        TailModel::Mollified { mass, eps } => {
            let (a, b) = Kernel::get().envelope();
            let g = |x: f64| x.powf(-p) * (mass * a * (-b * (x * eps).sqrt()).exp()).powi(2);
            let tail = 2.0 * decreasing_tail(g, k as u64);
            Ok(report(truncated, tail))
        }
    }
}

/// `sum_{k != 0} |k|^{-2s} Re(c1_k conj(c2_k))` at matched truncation.
pub fn hs_inner(sigma1: &Spectrum, sigma2: &Spectrum, s: f64) -> Result<f64> {
    if sigma1.k_max() != sigma2.k_max() {
        return Err(Error::TruncationMismatch(sigma1.k_max(), sigma2.k_max()));
    }
    for sp in [sigma1, sigma2] {
        if !sp.is_centered() {
            return Err(Error::NotCentered(sp.coeffs[0].re));
        }
    }
    Ok(2.0
        * sigma1
            .coeffs
            .iter()
            .zip(&sigma2.coeffs)
            .enumerate()
            .skip(1)
            .map(|(k, (a, b))| (k as f64).powf(-2.0 * s) * (a * b.conj()).re)
            .sum::<f64>())
}

/// For each scale, `||sigma - rho_eps * sigma||_{-s} / (eps^{s - gamma} ||sigma||_{-gamma})`
/// with `sigma = mu - 1`.
pub fn mollification_error_ratio(
    mu: &Measure,
    s: f64,
    gamma: f64,
    eps_list: &[f64],
    k_max: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(gamma > 0.0 && gamma <= s) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} must lie in (0, s]")));
    }
    let sp = spectrum_of(mu, k_max, true);
    let denom = hs_norm_sq(&sp, gamma)?;
    if denom.infinite {
        return Err(Error::InfiniteNorm);
    }
    let atomic_tail = match sp.tail {
        TailModel::Atomic { mean_sq, .. } => 2.0 * mean_sq * power_tail(2.0 * s, k_max as u64).0,
        _ => 0.0,
    };
    let kern = Kernel::get();
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(Error::InvalidScale(eps));
            }
            let num: f64 = 2.0
                * sp.coeffs
                    .par_iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| {
                        let damp = 1.0 - kern.hat(k as f64 * eps);
                        (k as f64).powf(-2.0 * s) * c.norm_sqr() * damp * damp
                    })
                    .sum::<f64>()
                + atomic_tail;
            if denom.value == 0.0 {
                return Ok((eps, 0.0));
            }
            Ok((eps, num.sqrt() / (eps.powf(s - gamma) * denom.value.sqrt())))
        })
        .collect()
}

/// Returns the spectral norm and the scale integral
/// `int_0^1 eps^{2s} int |rho_eps * sigma|^2 dx d eps / eps`, the latter via
/// Parseval and a log-spaced trapezoid rule with `quad_nodes` nodes.
pub fn characterization2_lhs_rhs(
    mu: &Measure,
    s: f64,
    k_max: usize,
    quad_nodes: usize,
) -> Result<(f64, f64)> {
    let sp = spectrum_of(mu, k_max, true);
    let lhs = hs_norm_sq(&sp, s)?;
    if lhs.infinite {
        return Err(Error::InfiniteNorm);
    }
    // G(u) = int_0^u v^{2s-1} hat(v)^2 dv, tabulated on a log grid up to the cutoff.
    let kern = Kernel::get();
    let n = quad_nodes.max(16);
    let (lo, hi) = (1e-8_f64, HAT_CUTOFF);
    let step = (hi / lo).ln() / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|i| lo * (step * i as f64).exp()).collect();
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|&u| u.powf(2.0 * s) * kern.hat(u).powi(2))
        .collect();
    let mut cum = vec![lo.powf(2.0 * s) / (2.0 * s)];
    for i in 1..n {
        cum.push(cum[i - 1] + 0.5 * step * (vals[i - 1] + vals[i]));
    }
    let g = |u: f64| -> f64 {
        if u >= hi {
            return cum[n - 1];
        }
        let pos = (u / lo).ln() / step;
        let i = (pos.floor() as usize).min(n - 2);
        let f = pos - i as f64;
        cum[i] * (1.0 - f) + cum[i + 1] * f
    };
    let rhs = 2.0
        * sp.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| {
                let kf = k as f64;
                kf.powf(-2.0 * s) * c.norm_sqr() * g(kf)
            })
            .sum::<f64>();
    let rhs_tail = match sp.tail {
        TailModel::Atomic { mean_sq, .. } => 2.0 * mean_sq * cum[n - 1] * power_tail(2.0 * s, k_max as u64).0,
        _ => 0.0,
    };
    Ok((lhs.value, rhs + rhs_tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{AtomicMeasure, BlockMeasure};

    #[test]
    fn lebesgue_spectrum_is_zero() {
        let sp = spectrum_of(&BlockMeasure::lebesgue().into(), 64, true);
        assert!(sp.coeffs().iter().all(|c| c.norm() == 0.0));
        assert_eq!(hs_norm_sq(&sp, 0.3).unwrap().value, 0.0);
    }

    #[test]
    fn equispaced_coefficients() {
        let sp = spectrum_of(&AtomicMeasure::equispaced(4, 0.0).into(), 4000, true);
        for k in 1..=4000 {
            let expect = if k % 4 == 0 { 1.0 } else { 0.0 };
            assert!((sp.coeff(k as i64) - expect).norm() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn dirac_at_origin() {
        let sp = spectrum_of(&AtomicMeasure::dirac(0.0).into(), 100, true);
        assert!(sp.coeffs()[1..].iter().all(|c| (c - 1.0).norm() < 1e-15));
        assert!(hs_norm_sq(&sp, 0.5).unwrap().infinite);
    }

    #[test]
    fn not_centered() {
        let sp = spectrum_of(&AtomicMeasure::dirac(0.0).into(), 10, false);
        assert!(matches!(hs_norm_sq(&sp, 0.7), Err(Error::NotCentered(_))));
    }

    #[test]
    fn norm_report_json() {
        let r = NormReport { value: 0.0, tail: 0.0, k: 3, infinite: true };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"value":null,"tail":0.0,"K":3,"infinite":true}"#
        );
    }

    #[test]
    fn mismatch() {
        let a = spectrum_of(&AtomicMeasure::dirac(0.0).into(), 10, true);
        let b = spectrum_of(&AtomicMeasure::dirac(0.0).into(), 11, true);
        assert!(matches!(hs_inner(&a, &b, 0.7), Err(Error::TruncationMismatch(10, 11))));
    }
}
