mod common;

use branchlab_core::pattern::IrrigationPattern;
use branchlab_core::transport::w2_line;
use branchlab_core::validate::{validate, Check, ValidationConfig};
use common::{random_tree, rel};
use proptest::prelude::*;

fn total_energy(e: (f64, f64)) -> f64 {
    e.0 + e.1
}

/// Edges whose tail is reachable from `node`.
fn downstream(p: &IrrigationPattern, node: usize) -> Vec<bool> {
    let mut reach = vec![false; p.nodes().len()];
    reach[node] = true;
    for v in p.time_order() {
        if p.in_edges(v).iter().any(|&k| reach[p.edges()[k].from]) {
            reach[v] = true;
        }
    }
    p.edges().iter().map(|e| reach[e.from]).collect()
}

/// Mass transported from the slice at `a` to the slice at `b` along the
/// pattern: each edge live at `b` is traced back to its ancestor at `a`.
fn induced_cost(p: &IrrigationPattern, a: f64, b: f64) -> f64 {
    p.live_edges(b)
        .into_iter()
        .map(|k| {
            let mut e = k;
            while p.nodes()[p.edges()[e].from].t > a {
                e = p.in_edges(p.edges()[e].from)[0];
            }
            let d = p.edge_position(k, b) - p.edge_position(e, a);
            p.edges()[k].mass * d * d
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn slices_carry_unit_mass(seed in any::<u64>(), depth in 1usize..6, ts in prop::collection::vec(0.0f64..1.0, 20)) {
        let p = random_tree(seed, 0.7, depth);
        for u in ts {
            let s = p.slice(u * 0.7).unwrap();
            prop_assert!((s.measure.total_mass() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn energy_is_additive_over_time(seed in any::<u64>(), depth in 1usize..6, u in 0.01f64..0.49, v in 0.51f64..0.99) {
        let t = 0.9;
        let p = random_tree(seed, t, depth);
        let (a, b, c) = (u * t * 0.5, (u + v) * 0.5 * t, v * t);
        let whole = total_energy(p.internal_energy(a, c).unwrap());
        let parts = total_energy(p.internal_energy(a, b).unwrap()) + total_energy(p.internal_energy(b, c).unwrap());
        prop_assert!(rel(whole, parts) <= 1e-12, "{} vs {}", whole, parts);
    }

    #[test]
    fn kinetic_energy_dominates_transport_cost(seed in any::<u64>(), depth in 1usize..6, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let t = 0.8;
        let p = random_tree(seed, t, depth);
        let (a, b) = (u.min(v) * t, u.max(v) * t);
        prop_assume!(b - a > 1e-6);
        let (_, kin) = p.internal_energy(a, b).unwrap();
        let w2 = p.slice_line(a).unwrap().w2_sq(&p.slice_line(b).unwrap()).unwrap();
        prop_assert!(kin >= w2 / (b - a) - 1e-9, "{} < {}", kin, w2 / (b - a));
    }

    #[test]
    fn subsystem_and_complement_split_the_energy(seed in any::<u64>(), depth in 1usize..6, pick in any::<prop::sample::Index>()) {
        let t = 0.6;
        let p = random_tree(seed, t, depth);
        let node = pick.index(p.nodes().len());
        let sub = p.subsystem(node).unwrap();
        let inside = downstream(&p, node);
        let complement: Vec<usize> = (0..p.edges().len()).filter(|&k| !inside[k]).collect();
        let split = total_energy(sub.internal_energy(0.0, t).unwrap()) + total_energy(p.internal_energy_of(complement, 0.0, t));
        let whole = total_energy(p.internal_energy(0.0, t).unwrap());
        prop_assert!(rel(split, whole) <= 1e-12, "{} vs {}", split, whole);
    }

    #[test]
    fn monotone_patterns_induce_optimal_plans(seed in any::<u64>(), depth in 1usize..6, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let t = 0.5;
        let p = random_tree(seed, t, depth);
        let cfg = ValidationConfig { checks: vec![Check::MonotoneCoupling, Check::NoLoop], ..ValidationConfig::default() };
        prop_assert!(validate(&p, &cfg).all_passed());
        let (a, b) = (u.min(v) * t, u.max(v) * t);
        let sa = p.slice(a).unwrap().measure;
        let sb = p.slice(b).unwrap().measure;
        let optimal = w2_line(&sa, &sb).unwrap().cost_sq;
        let induced = induced_cost(&p, a, b);
        prop_assert!((induced - optimal).abs() <= 1e-10, "{} vs {}", induced, optimal);
    }
}
