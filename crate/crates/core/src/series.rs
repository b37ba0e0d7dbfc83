//! Power sums `sum n^{-p}` and their tails, evaluated by summation with an
//! Euler-Maclaurin remainder.

use std::f64::consts::PI;

/// `B_{2j} / (2j)!` for `j = 1..=5`.
const EM_COEFFS: [f64; 5] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
];

/// `sum_{n > k} n^{-p}` for `p > 1` and `k >= 1`, with an error estimate.
///
/// Below `k = 32` the first terms are summed directly so the asymptotic
/// expansion is only used where it is accurate to roundoff.
pub fn power_tail(p: f64, k: u64) -> (f64, f64) {
    if p <= 1.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let start = k.max(32);
    let mut direct = 0.0;
    for n in (k + 1..=start).rev() {
        direct += (n as f64).powf(-p);
    }
    let x = start as f64;
    let mut acc = x.powf(1.0 - p) / (p - 1.0) - 0.5 * x.powf(-p);
    // Rising factorial p (p+1) ... (p + 2j - 2) times x^{-p-2j+1}.
    let mut rising = p;
    let mut pw = x.powf(-p - 1.0);
    let mut last = 0.0;
    for (j, c) in EM_COEFFS.iter().enumerate() {
        last = c * rising * pw;
        acc += last;
        let a = p + 2.0 * j as f64 + 1.0;
        rising *= a * (a + 1.0);
        pw /= x * x;
    }
    (direct + acc, last.abs())
}

/// `sum_{n=1}^{k} n^{-p}` summed from the small terms up.
pub fn power_partial(p: f64, k: u64) -> f64 {
    (1..=k).rev().map(|n| (n as f64).powf(-p)).sum()
}

/// Riemann zeta for real `p > 1`.
pub fn zeta(p: f64) -> f64 {
    power_partial(p, 32) + power_tail(p, 32).0
}

/// `sum_{n > k} g(n)` for a positive, nonincreasing `g`: explicit terms then an
/// integral bound on a geometric grid.
pub fn decreasing_tail(g: impl Fn(f64) -> f64, k: u64) -> f64 {
    let mut acc = 0.0;
    let stop = k + 2000;
    for n in k + 1..=stop {
        acc += g(n as f64);
    }
    // int_{stop}^inf g <= sum of right-endpoint-free trapezoid upper estimates.
    let mut a = stop as f64;
    let ratio = 1.05;
    for _ in 0..4000 {
        let b = a * ratio;
        let piece = (b - a) * g(a);
        acc += piece;
        if piece < 1e-40 || piece < acc * 1e-18 {
            break;
        }
        a = b;
    }
    acc
}

/// Hurwitz zeta `sum_{n>=0} (n+q)^{-sigma}` for `q >= 0` and `sigma != 1`,
/// continued analytically through the Euler-Maclaurin remainder. A zero `q`
/// drops the `n = 0` term when `sigma < 0` and is infinite otherwise.
pub fn hurwitz_zeta(sigma: f64, q: f64) -> f64 {
    const N: usize = 16;
    let mut acc = 0.0;
    for n in (0..N).rev() {
        let b = n as f64 + q;
        if b == 0.0 {
            if sigma > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        acc += b.powf(-sigma);
    }
    let x = N as f64 + q;
    acc += x.powf(1.0 - sigma) / (sigma - 1.0) + 0.5 * x.powf(-sigma);
    let mut rising = sigma;
    let mut pw = x.powf(-sigma - 1.0);
    for (j, c) in EM_COEFFS.iter().enumerate() {
        acc += c * rising * pw;
        let a = sigma + 2.0 * j as f64 + 1.0;
        rising *= a * (a + 1.0);
        pw /= x * x;
    }
    acc
}

/// `sum_{k>=1} k^{-a} cos(2 pi k x)` for non-integer `a > 0`.
pub fn periodic_cos(a: f64, x: f64) -> f64 {
    let x = x.rem_euclid(1.0);
    let c = libm::tgamma(1.0 - a) * (2.0 * PI).powf(a - 1.0) * (0.5 * PI * a).sin();
    c * (hurwitz_zeta(1.0 - a, x) + hurwitz_zeta(1.0 - a, 1.0 - x))
}

/// `sum_{k>=1} k^{-b} sin(2 pi k x)` for non-integer `b > 0`; zero at `x = 0`.
pub fn periodic_sin(b: f64, x: f64) -> f64 {
    let x = x.rem_euclid(1.0);
    if x == 0.0 {
        return 0.0;
    }
    let c = libm::tgamma(1.0 - b) * (2.0 * PI).powf(b - 1.0) * (0.5 * PI * b).cos();
    c * (hurwitz_zeta(1.0 - b, x) - hurwitz_zeta(1.0 - b, 1.0 - x))
}
