use gnt_core::gradcheck::random_tokens;
use gnt_core::lattice::TokenSequence;
use gnt_core::model::checkpoint::{read_checkpoint, write_checkpoint};
use gnt_core::model::{Matrix, ModelConfig, Transducer};
use gnt_core::rng::substream;
use proptest::prelude::*;
use rand::Rng as _;

fn features(seed: u64, frames: usize, dim: usize) -> Matrix {
    let mut rng = substream(seed, "model-test");
    Matrix::from_vec(frames, dim, (0..frames * dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

fn config(predictor: &str) -> ModelConfig {
    ModelConfig {
        predictor: predictor.into(),
        ..ModelConfig::small(3, 3)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Changing frames after `t` leaves encoder outputs up to `t` untouched.
    #[test]
    fn encoder_is_causal(seed in any::<u64>(), frames in 2usize..9, cut in 0usize..8) {
        let cut = cut % (frames - 1);
        let model = Transducer::new(&config("recurrent"), seed).unwrap();
        let a = features(seed, frames, 3);
        let mut b = a.clone();
        for v in &mut b.as_mut_slice()[(cut + 1) * 3..] {
            *v += 1.5;
        }
        let (ea, eb) = (model.encode(&a).unwrap(), model.encode(&b).unwrap());
        for t in 0..=cut {
            prop_assert_eq!(&ea.frames[t], &eb.frames[t]);
        }
        prop_assert_ne!(&ea.frames[frames - 1], &eb.frames[frames - 1]);
    }

    /// A limited-history predictor only sees the last `n` tokens.
    #[test]
    fn limited_history_forgets(seed in any::<u64>(), n in 1usize..4, extra in 0usize..4) {
        let model = Transducer::new(&config(&format!("limited:{n}")), seed).unwrap();
        let mut rng = substream(seed, "history");
        let tail = random_tokens(&mut rng, n, 3).into_vec();
        let mut x = random_tokens(&mut rng, extra, 3).into_vec();
        let mut y = random_tokens(&mut rng, extra + 1, 3).into_vec();
        x.extend(&tail);
        y.extend(&tail);
        let px = model.predict(&TokenSequence::new(x).unwrap()).unwrap();
        let py = model.predict(&TokenSequence::new(y).unwrap()).unwrap();
        let (lx, ly) = (px.states.last().unwrap(), py.states.last().unwrap());
        prop_assert_eq!(model.project_predictor(lx), model.project_predictor(ly));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), limited in any::<bool>(), alpha in 0.0f64..=1.0) {
        let predictor = if limited { "limited:2" } else { "recurrent" };
        let mut model = Transducer::new(&config(predictor), seed).unwrap();
        model.params.alpha = alpha;
        let mut buf = Vec::new();
        write_checkpoint(&model.params, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(back.config.clone(), model.params.config.clone());
        prop_assert_eq!(back.alpha.to_bits(), alpha.to_bits());
        let a: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = model.params.flatten().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        // Any truncation is detected.
        let cut = (seed as usize) % buf.len();
        prop_assert!(read_checkpoint(&buf[..cut]).is_err());
    }
}

/// Recurrent state depends on the full history.
#[test]
fn recurrent_predictor_remembers() {
    let model = Transducer::new(&config("recurrent"), 3).unwrap();
    let a = model.predict(&TokenSequence::new(vec![1, 2, 3]).unwrap()).unwrap();
    let b = model.predict(&TokenSequence::new(vec![2, 2, 3]).unwrap()).unwrap();
    assert_ne!(
        model.project_predictor(a.states.last().unwrap()),
        model.project_predictor(b.states.last().unwrap())
    );
}
