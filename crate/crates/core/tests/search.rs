mod common;

use common::{hashed_row, rel};
use gnt_core::data::make_mail_nail_dataset;
use gnt_core::lattice::{apply_partial_normalization, forward_score, TokenSequence, Topology};
use gnt_core::model::{ModelConfig, Transducer};
use gnt_core::search::{
    all_sequences, beam_search, scorer_grid, training_hypotheses, FnScorer, Hypothesis, ModelScorer, SearchConfig,
};
use proptest::prelude::*;

const EXHAUSTIVE: usize = 1_000_000;

/// Ranks every sequence of length `<= e` by forward score.
fn enumeration_ranking<F: Fn(usize, &[usize]) -> Vec<f64>>(s: &FnScorer<F>, vocab: usize, e: usize) -> Vec<(TokenSequence, f64)> {
    let mut v: Vec<(TokenSequence, f64)> = all_sequences(vocab, e)
        .into_iter()
        .map(|z| {
            let f = forward_score(&scorer_grid(s, &z), &z).unwrap().value();
            (z, f)
        })
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.as_slice().cmp(b.0.as_slice())));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exhaustive_beam_matches_enumeration(seed in any::<u64>(), frames in 1usize..5, vocab in 1usize..3) {
        // Sequences no longer than the per-frame emission limit keep every
        // alignment, so their beam scores are exact.
        let e = if frames <= 3 { 3 } else { 2 };
        let s = FnScorer::new(frames, vocab, Topology::default(), move |t, p| hashed_row(seed, t, p, vocab, 3.0, true));
        let cfg = SearchConfig { beam: EXHAUSTIVE, nbest: EXHAUSTIVE, max_emissions: e };
        let beam: Vec<Hypothesis> = beam_search(&s, &cfg).unwrap().into_iter().filter(|h| h.tokens.len() <= e).collect();
        let exact = enumeration_ranking(&s, vocab, e);
        prop_assert_eq!(beam.len(), exact.len());
        for (b, (z, f)) in beam.iter().zip(&exact) {
            prop_assert_eq!(&b.tokens, z);
            prop_assert!(rel(b.score, *f) <= 1e-12);
        }
    }

    #[test]
    fn training_sets_always_hold_the_reference(seed in any::<u64>(), n in 1usize..6, m in 0usize..8) {
        let all = all_sequences(2, 3);
        let pick = |i: u64| all[(i % all.len() as u64) as usize].clone();
        let nbest: Vec<Hypothesis> = (0..m as u64)
            .map(|i| Hypothesis { tokens: pick(seed.wrapping_add(i * 7919)), score: -(i as f64) })
            .collect();
        let reference = pick(seed.rotate_left(13));
        let h = training_hypotheses(&nbest, &reference, n);
        prop_assert_eq!(h.reference(), &reference);
        prop_assert!(h.len() <= n.max(1));
        let mut seen = h.hyps().to_vec();
        seen.sort_by(|a, b| a.as_slice().cmp(b.as_slice()));
        seen.dedup();
        prop_assert_eq!(seen.len(), h.len());
    }
}

/// Search rows and training grids come from the same partially normalized
/// weights.
#[test]
fn model_scores_agree_with_training_grids() {
    let data = make_mail_nail_dataset(0.5, 1, 2);
    let model = Transducer::new(&ModelConfig::small(data.feat_dim, data.vocab), 5).unwrap();
    let u = &data.utterances[0];
    for alpha in [1.0, 0.3, 0.0] {
        let scorer = ModelScorer::new(&model, &u.features, alpha, u.topology.clone()).unwrap();
        let cfg = SearchConfig { beam: EXHAUSTIVE, nbest: EXHAUSTIVE, max_emissions: 2 };
        let out = beam_search(&scorer, &cfg).unwrap();
        assert_eq!(out.len(), all_sequences(data.vocab, 2).len());
        for h in &out {
            let pass = model.forward(&u.features, std::slice::from_ref(&h.tokens), &u.topology).unwrap();
            let g = apply_partial_normalization(&pass.hyps[0].grid, alpha);
            let f = forward_score(&g, &h.tokens).unwrap().value();
            assert!(rel(h.score, f) <= 1e-10, "{alpha} {:?} {f}", h);
        }
    }
}
