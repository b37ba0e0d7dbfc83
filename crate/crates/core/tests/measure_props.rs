mod common;

use branchlab_core::measure::{ball_mass, mollify_eval, AtomicMeasure, Block, BlockMeasure, Measure, MollifiedMeasure};
use common::random_atoms;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonicalize_is_idempotent(raw in prop::collection::vec((-2.0f64..3.0, 0.01f64..2.0), 1..40)) {
        let once = AtomicMeasure::canonicalize(&raw).unwrap();
        let twice = AtomicMeasure::canonicalize(once.atoms()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.pushforward(|x| x).unwrap(), once);
    }

    #[test]
    fn ball_mass_is_monotone_in_radius(seed in any::<u64>(), n in 1usize..30, x in 0.0f64..1.0) {
        let mu = Measure::Atomic(random_atoms(seed, n));
        let mut prev = 0.0;
        for j in 0..=40 {
            let r = 0.6 * j as f64 / 40.0;
            let m = ball_mass(&mu, x, r);
            prop_assert!(m >= prev);
            prev = m;
        }
        prop_assert!((ball_mass(&mu, x, 0.5) - mu.total_mass()).abs() < 1e-14);
    }

    #[test]
    fn ball_mass_adds_over_disjoint_measures(
        a in prop::collection::vec((0.0f64..0.5, 0.1f64..1.0), 1..15),
        b in prop::collection::vec((0.5f64..1.0, 0.1f64..1.0), 1..15),
        x in 0.0f64..1.0,
        r in 0.0f64..0.5,
    ) {
        let joint: Vec<_> = a.iter().chain(&b).cloned().collect();
        let (ma, mb, mj) = (
            AtomicMeasure::canonicalize(&a).unwrap(),
            AtomicMeasure::canonicalize(&b).unwrap(),
            AtomicMeasure::canonicalize(&joint).unwrap(),
        );
        let sum = ma.ball_mass(x, r) + mb.ball_mass(x, r);
        prop_assert!((mj.ball_mass(x, r) - sum).abs() <= 1e-12 * mj.total_mass());
    }

    #[test]
    fn mollified_density_integrates_to_mass(seed in any::<u64>(), n in 1usize..6, eps in 0.02f64..0.3, blocks in any::<bool>()) {
        let atoms = random_atoms(seed, n);
        let base = if blocks {
            let nb = atoms.len();
            Measure::Block(BlockMeasure::new(
                atoms.atoms().iter().enumerate().map(|(i, &(_, m))| Block {
                    center: (i as f64 + 0.5) / nb as f64,
                    width: 0.5 / nb as f64,
                    mass: m,
                }).collect(),
            ).unwrap())
        } else {
            Measure::Atomic(atoms)
        };
        let m = MollifiedMeasure::new(base, eps).unwrap();
        let nodes = 10_000;
        let h = 1.0 / nodes as f64;
        // Periodic trapezoid: endpoints coincide, so every node has full weight.
        let integral: f64 = (0..nodes).map(|i| mollify_eval(&m, i as f64 * h).unwrap()).sum::<f64>() * h;
        prop_assert!((integral - m.total_mass()).abs() <= 1e-8 * m.total_mass(), "{} vs {}", integral, m.total_mass());
    }
}
