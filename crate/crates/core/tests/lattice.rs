mod common;

use common::{hashed_row, rel};
use gnt_core::gradcheck::random_grid;
use gnt_core::lattice::{
    apply_partial_normalization, brute_force_score, enumerate_paths, forward_score, occupancy_gradients,
    Termination, TokenSequence, Topology, WeightGrid,
};
use gnt_core::logspace::{lse, LogWeight};
use gnt_core::rng::substream;
use gnt_core::search::{all_sequences, scorer_grid, FnScorer};
use proptest::prelude::*;

fn grid_and_tokens(seed: u64, t: usize, u: usize, k: usize, scale: f64) -> (WeightGrid, TokenSequence) {
    let mut rng = substream(seed, "lattice-test");
    let g = random_grid(&mut rng, t, u, k, scale);
    let z = gnt_core::gradcheck::random_tokens(&mut rng, u, k);
    (g, z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_matches_enumeration(seed in any::<u64>(), t in 0usize..5, u in 0usize..4, k in 1usize..4) {
        let (g, z) = grid_and_tokens(seed, t, u, k, 3.0);
        let f = forward_score(&g, &z).unwrap().value();
        let b = brute_force_score(&g, &z).unwrap().value();
        prop_assert!(rel(f, b) <= 1e-10, "{f} vs {b}");
    }

    #[test]
    fn occupancies_are_edge_posteriors(seed in any::<u64>(), t in 0usize..5, u in 0usize..4, k in 1usize..4) {
        let (g, z) = grid_and_tokens(seed, t, u, k, 2.0);
        let occ = occupancy_gradients(&g, &z).unwrap();
        for &v in occ.as_slice() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        // Every complete path has exactly T + U edges.
        let total: f64 = occ.as_slice().iter().sum();
        prop_assert!((total - (t + u) as f64).abs() <= 1e-9);
    }

    #[test]
    fn constant_shift_adds_path_length(seed in any::<u64>(), t in 1usize..5, u in 0usize..4, c in -5.0f64..5.0) {
        let (g, z) = grid_and_tokens(seed, t, u, 2, 2.0);
        let mut h = g.clone();
        h.shift(c);
        let d = forward_score(&h, &z).unwrap().value() - forward_score(&g, &z).unwrap().value();
        prop_assert!((d - (t + u) as f64 * c).abs() <= 1e-9);
    }

    #[test]
    fn partial_normalization_endpoints(seed in any::<u64>(), t in 0usize..4, u in 0usize..3) {
        let (g, _) = grid_and_tokens(seed, t, u, 2, 3.0);
        let same = apply_partial_normalization(&g, 0.0);
        prop_assert_eq!(same.as_slice(), g.as_slice());
        for row in apply_partial_normalization(&g, 1.0).rows() {
            prop_assert!(lse(row).abs() <= 1e-12);
        }
    }

    #[test]
    fn semiring_laws(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
        let (a, b, c) = (LogWeight::new(a), LogWeight::new(b), LogWeight::new(c));
        let close = |x: LogWeight, y: LogWeight| (x.value() - y.value()).abs() <= 1e-12 * x.value().abs().max(1.0);
        prop_assert!(close(a.plus(b), b.plus(a)));
        prop_assert!(close(a.plus(b).plus(c), a.plus(b.plus(c))));
        prop_assert!(close(a.times(b).times(c), a.times(b.times(c))));
        prop_assert!(close(a.times(b.plus(c)), a.times(b).plus(a.times(c))));
        prop_assert_eq!(a.plus(LogWeight::ZERO), a);
        prop_assert_eq!(a.times(LogWeight::ONE), a);
        prop_assert!(a.times(LogWeight::ZERO).is_zero());
    }

    /// With locally normalized rows and no token emission after the last
    /// frame, sequence probabilities sum to at most one.
    #[test]
    fn local_mass_bounded_with_final_blank(seed in any::<u64>(), t in 1usize..4, k in 1usize..3) {
        let topo = Topology { termination: Termination::FinalBlank, windows: None };
        let s = FnScorer::new(t, k, topo, move |tt, p| hashed_row(seed, tt, p, k, 3.0, true));
        let mass: f64 = all_sequences(k, 3)
            .iter()
            .map(|z| forward_score(&scorer_grid(&s, z), z).unwrap().value().exp())
            .sum();
        prop_assert!(mass <= 1.0 + 1e-12, "mass {mass}");
    }
}

/// Without the final-blank restriction, token edges at the last node carry
/// mass that the blank leaving the same node also claims, so local
/// probabilities can sum past one.
#[test]
fn free_termination_can_exceed_unit_mass() {
    let ln = |p: f64| p.ln();
    let s = FnScorer::new(1, 1, Topology::default(), move |t, p: &[usize]| match (t, p.len()) {
        (0, 0) => vec![ln(0.9), ln(0.1)],
        (1, 0) => vec![ln(0.1), ln(0.9)],
        (0, 1) => vec![ln(1.0), f64::NEG_INFINITY],
        _ => vec![ln(0.5), ln(0.5)],
    });
    let mass: f64 = all_sequences(1, 1)
        .iter()
        .map(|z| forward_score(&scorer_grid(&s, z), z).unwrap().value().exp())
        .sum();
    assert!((mass - 1.81).abs() < 1e-12, "{mass}");
}

#[test]
fn oracle_equivalence_exhaustive_shapes() {
    let mut worst: f64 = 0.0;
    for seed in 0..4u64 {
        for t in 0..=5 {
            for u in 0..=5 {
                if t + u > 10 {
                    continue;
                }
                for k in 1..=3 {
                    let (g, z) = grid_and_tokens(seed * 1000 + (t * 100 + u * 10 + k) as u64, t, u, k, 4.0);
                    let f = forward_score(&g, &z).unwrap().value();
                    let b = brute_force_score(&g, &z).unwrap().value();
                    worst = worst.max(rel(f, b));
                }
            }
        }
    }
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn path_count_is_binomial() {
    for t in 0..5usize {
        for u in 0..5usize {
            let n = enumerate_paths(t, u).unwrap().len();
            let binom = (1..=u).fold(1usize, |acc, i| acc * (t + i) / i);
            assert_eq!(n, binom);
        }
    }
}
