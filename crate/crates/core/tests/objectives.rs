mod common;

use common::{hashed_row, rel};
use gnt_core::gradcheck::{random_grid, random_hypotheses};
use gnt_core::lattice::{brute_force_score, forward_score, Topology, WeightGrid};
use gnt_core::logspace::lse;
use gnt_core::losses::{
    global_nbest_loss, interpolated_loss, local_nll, total_objective, HypothesisSet,
};
use gnt_core::rng::substream;
use gnt_core::search::{all_sequences, scorer_grid, FnScorer};
use proptest::prelude::*;

fn instance(seed: u64, n: usize) -> (Vec<WeightGrid>, HypothesisSet) {
    let mut rng = substream(seed, "objective-test");
    let first = gnt_core::gradcheck::random_tokens(&mut rng, (seed % 3) as usize, 2);
    let hyps = HypothesisSet::new(random_hypotheses(&mut rng, first, n, 3, 2), 0).unwrap();
    let frames = 1 + (seed % 3) as usize;
    let grids = hyps
        .hyps()
        .iter()
        .map(|z| random_grid(&mut rng, frames, z.len(), 2, 3.0))
        .collect();
    (grids, hyps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn global_loss_is_nonnegative(seed in any::<u64>(), n in 1usize..5) {
        let (grids, h) = instance(seed, n);
        let out = global_nbest_loss(&grids, &h).unwrap();
        prop_assert!(out.loss >= -1e-12);
        if h.len() == 1 {
            prop_assert!(out.loss.abs() <= 1e-12);
        }
    }

    #[test]
    fn raising_the_reference_lowers_global_loss(seed in any::<u64>(), n in 2usize..5, c in 0.01f64..3.0) {
        let (mut grids, h) = instance(seed, n);
        let before = global_nbest_loss(&grids, &h).unwrap().loss;
        let r = h.ref_index();
        let steps = (grids[r].frames() + grids[r].tokens()) as f64;
        grids[r].shift(c / steps.max(1.0));
        let after = global_nbest_loss(&grids, &h).unwrap().loss;
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn interpolation_endpoints(seed in any::<u64>(), n in 1usize..5) {
        let (grids, h) = instance(seed, n);
        let local = local_nll(&grids[h.ref_index()], h.reference()).unwrap().0;
        let global = global_nbest_loss(&grids, &h).unwrap().loss;
        let at1 = interpolated_loss(&grids, &h, 1.0).unwrap().loss;
        let at0 = interpolated_loss(&grids, &h, 0.0).unwrap().loss;
        prop_assert!((at1 - local).abs() <= 1e-12 * local.abs().max(1.0));
        prop_assert!((at0 - global).abs() <= 1e-12 * global.abs().max(1.0));
    }

    #[test]
    fn zero_lambda_is_task_loss(seed in any::<u64>(), n in 1usize..5, a in 0.0f64..1.0) {
        let (grids, h) = instance(seed, n);
        let task = interpolated_loss(&grids, &h, a).unwrap();
        let total = total_objective(&grids, &h, a, 0.0).unwrap();
        prop_assert_eq!(task.loss, total.loss);
        prop_assert!(total_objective(&grids, &h, a, -0.1).is_err());
    }

    /// Full enumeration turns the N-best loss into the exact restricted
    /// posterior.
    #[test]
    fn full_enumeration_is_exact_posterior(seed in any::<u64>(), r in 0usize..15) {
        let (frames, vocab) = (3, 2);
        let s = FnScorer::new(frames, vocab, Topology::default(), move |t, p| hashed_row(seed, t, p, vocab, 3.0, false));
        let space = all_sequences(vocab, 3);
        let grids: Vec<WeightGrid> = space.iter().map(|z| scorer_grid(&s, z)).collect();
        let h = HypothesisSet::new(space.clone(), r).unwrap();
        let loss = global_nbest_loss(&grids, &h).unwrap().loss;
        let scores: Vec<f64> = space
            .iter()
            .zip(&grids)
            .map(|(z, g)| brute_force_score(g, z).unwrap().value())
            .collect();
        let exact = -(scores[r] - lse(&scores));
        prop_assert!(rel(loss, exact) <= 1e-10 || (loss - exact).abs() <= 1e-12);
        // Unnormalized argmax equals posterior argmax.
        let fw: Vec<f64> = space.iter().zip(&grids).map(|(z, g)| forward_score(g, z).unwrap().value()).collect();
        let best = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        let post: Vec<f64> = fw.iter().map(|s| s - lse(&fw)).collect();
        prop_assert_eq!(best(&fw), best(&post));
    }
}

#[test]
fn duplicate_hypotheses_rejected() {
    let z = gnt_core::lattice::TokenSequence::new(vec![1]).unwrap();
    assert!(HypothesisSet::new(vec![z.clone(), z], 0).is_err());
}
