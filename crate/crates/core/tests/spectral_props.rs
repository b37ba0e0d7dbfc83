mod common;

use branchlab_core::measure::{AtomicMeasure, BlockMeasure, Measure, MollifiedMeasure};
use branchlab_core::spectral::{hs_inner, hs_norm_sq, spectrum_of, spectrum_of_mollified};
use common::{random_atoms, rel};
use proptest::prelude::*;

/// `lim N r^{1-2s} ||blocks - 1||^2` as `N r -> 0`, i.e. `2 int_0^inf x^{-2s} sinc^2(pi x) dx`.
fn block_constant(s: f64) -> f64 {
    (2.0 * std::f64::consts::PI).powf(2.0 * s) / (libm::tgamma(2.0 * s + 2.0) * (std::f64::consts::PI * s).cos())
}

#[test]
fn block_grid_norm_is_bounded_by_one_constant() {
    for s in [0.1, 0.25, 0.3, 0.4, 0.45] {
        let c = block_constant(s);
        for u in [1.0, 0.5, 0.25, 0.125, 1.0 / 16.0, 1.0 / 32.0] {
            let mut ratios = Vec::new();
            for n in [2usize, 4, 8, 16, 32] {
                let r = u / n as f64;
                let mu = Measure::Block(BlockMeasure::uniform_grid(n, r).unwrap());
                let rep = hs_norm_sq(&spectrum_of(&mu, 2048 * n, true), s).unwrap();
                let ratio = rep.value * n as f64 * r.powf(1.0 - 2.0 * s);
                assert!(ratio <= c * (1.0 + 1e-9), "s={s} N={n} r={r}: {ratio} > {c}");
                ratios.push(ratio);
            }
            // The bound depends on (N, r) only through N r.
            for w in ratios.windows(2) {
                assert!((w[0] - w[1]).abs() <= 1e-9 * c, "s={s} u={u}: {ratios:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn norm_is_rotation_invariant(seed in any::<u64>(), n in 1usize..20, theta in 0.0f64..1.0, s in 0.55f64..0.95) {
        let mu = random_atoms(seed, n);
        let rotated = mu.pushforward(|x| x + theta).unwrap();
        let a = hs_norm_sq(&spectrum_of(&Measure::Atomic(mu), 256, true), s).unwrap();
        let b = hs_norm_sq(&spectrum_of(&Measure::Atomic(rotated), 256, true), s).unwrap();
        prop_assert!(rel(a.value, b.value) <= 1e-12, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn equispaced_norm_scales_as_n_to_minus_2s(s in 0.55f64..0.95, m in 1usize..64, offset in 0.0f64..1.0) {
        // Truncation K = m N keeps the same m nonzero orders for every N.
        let reference: Vec<f64> = [1usize, 2, 3, 5, 8, 13]
            .iter()
            .map(|&n| {
                let mu = Measure::Atomic(AtomicMeasure::equispaced(n, offset / n as f64));
                spectrum_of(&mu, m * n, true).truncated_norm_sq(s) * (n as f64).powf(2.0 * s)
            })
            .collect();
        for v in &reference {
            prop_assert!(rel(*v, reference[0]) <= 1e-10, "{:?}", reference);
        }
    }

    #[test]
    fn inner_product_obeys_cauchy_schwarz(a in any::<u64>(), b in any::<u64>(), n in 1usize..12, s in 0.05f64..0.95) {
        let k = 300;
        let sa = spectrum_of(&Measure::Atomic(random_atoms(a, n)), k, true);
        let sb = spectrum_of(&Measure::Atomic(random_atoms(b, n + 1)), k, true);
        let ip = hs_inner(&sa, &sb, s).unwrap();
        prop_assert!(ip * ip <= sa.truncated_norm_sq(s) * sb.truncated_norm_sq(s) * (1.0 + 1e-12));
    }

    #[test]
    fn interpolation_between_l2_and_h_minus_one(seed in any::<u64>(), n in 1usize..8, eps in 0.02f64..0.2, s in 0.0f64..1.0) {
        let m = MollifiedMeasure::new(Measure::Atomic(random_atoms(seed, n)), eps).unwrap();
        let sp = spectrum_of_mollified(&m, 800, true);
        let lhs = sp.truncated_norm_sq(s).sqrt();
        let rhs = sp.l2_norm_sq().sqrt().powf(1.0 - s) * sp.truncated_norm_sq(1.0).sqrt().powf(s);
        prop_assert!(lhs <= rhs + 1e-9, "{} > {}", lhs, rhs);
    }
}
