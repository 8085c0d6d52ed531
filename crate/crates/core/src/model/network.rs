//! The toy streaming transducer: causal windowed encoder, predictor strategy,
//! and a tanh joiner whose outputs are used directly as log-weights.

use crate::error::{Error, Result};
use crate::lattice::{Topology, TokenSequence, WeightGrid};
use crate::model::matrix::Matrix;
use crate::model::params::{Gradients, ModelConfig, ModelParams};
use crate::model::predictor::{predictor_registry, Predictor, PredictorState};

/// Per-frame encodings; frame `s` (0-based) depends only on input frames
/// `s+1-C ..= s`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub frames: Vec<Vec<f64>>,
    windows: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Predictor states for every prefix length `0..=U` of one sequence.
#[derive(Clone, Debug)]
pub struct PredictorStates {
    pub tokens: TokenSequence,
    pub states: Vec<PredictorState>,
}

/// Everything backprop needs for one hypothesis grid.
#[derive(Clone, Debug)]
pub struct HypothesisPass {
    pub pred: PredictorStates,
    pub grid: WeightGrid,
    /// Joiner activations per node, `(t * (U+1) + u) * J`.
    hidden: Vec<f64>,
}

/// A forward evaluation of several hypotheses against one input.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    version: u64,
    pub enc: EncoderOutput,
    pub hyps: Vec<HypothesisPass>,
}

impl ForwardPass {
    pub fn grids(&self) -> Vec<&WeightGrid> {
        self.hyps.iter().map(|h| &h.grid).collect()
    }
}

pub struct Transducer {
    pub params: ModelParams,
    predictor: Box<dyn Predictor>,
}

impl Clone for Transducer {
    fn clone(&self) -> Self {
        Transducer::from_params(self.params.clone()).expect("params already validated")
    }
}

impl std::fmt::Debug for Transducer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transducer").field("config", &self.params.config).finish()
    }
}

/// Encoder frame feeding node time `t`: frame `min(t+1, T)` in 1-based terms.
#[inline]
pub fn frame_for_node(t: usize, frames: usize) -> Option<usize> {
    if frames == 0 {
        None
    } else {
        Some(t.min(frames - 1))
    }
}

impl Transducer {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::from_params(ModelParams::init(config, seed)?)
    }

    pub fn from_params(params: ModelParams) -> Result<Self> {
        let predictor = predictor_registry().build_str(&params.config.predictor)?;
        Ok(Transducer { params, predictor })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn predictor(&self) -> &dyn Predictor {
        self.predictor.as_ref()
    }

    pub fn encode(&self, features: &Matrix) -> Result<EncoderOutput> {
        let cfg = &self.params.config;
        if features.rows() > 0 && features.cols() != cfg.feat_dim {
            return Err(Error::LengthMismatch {
                what: "feature dimension",
                expected: cfg.feat_dim,
                actual: features.cols(),
            });
        }
        let e = &self.params.encoder;
        let n = features.rows();
        let mut out = EncoderOutput {
            frames: Vec::with_capacity(n),
            windows: Vec::with_capacity(n),
            hidden: Vec::with_capacity(n),
        };
        for s in 0..n {
            let mut window = Vec::with_capacity(cfg.context * cfg.feat_dim);
            for back in (0..cfg.context).rev() {
                if s >= back {
                    window.extend_from_slice(features.row(s - back));
                } else {
                    window.extend(std::iter::repeat_n(0.0, cfg.feat_dim));
                }
            }
            let h1: Vec<f64> = e
                .w1
                .matvec(&window)
                .iter()
                .zip(e.b1.as_slice())
                .map(|(a, b)| (a + b).tanh())
                .collect();
            let enc: Vec<f64> = e
                .w2
                .matvec(&h1)
                .iter()
                .zip(e.b2.as_slice())
                .map(|(a, b)| (a + b).tanh())
                .collect();
            out.windows.push(window);
            out.hidden.push(h1);
            out.frames.push(enc);
        }
        Ok(out)
    }

    pub fn predictor_start(&self) -> PredictorState {
        self.predictor.start(&self.params.predictor)
    }

    pub fn predictor_step(&self, state: &PredictorState, token: usize) -> Result<PredictorState> {
        let vocab = self.params.config.vocab;
        if token == 0 || token > vocab {
            return Err(Error::TokenOutOfRange { token, vocab });
        }
        Ok(self.predictor.step(&self.params.predictor, state, token))
    }

    pub fn predict(&self, z: &TokenSequence) -> Result<PredictorStates> {
        let mut states = Vec::with_capacity(z.len() + 1);
        states.push(self.predictor_start());
        for &k in z.iter() {
            let next = self.predictor_step(states.last().expect("non-empty"), k)?;
            states.push(next);
        }
        Ok(PredictorStates {
            tokens: z.clone(),
            states,
        })
    }

    /// `W_enc e_t` for every frame, or a single zero vector for empty input.
    pub fn project_encoder(&self, enc: &EncoderOutput) -> Vec<Vec<f64>> {
        enc.frames.iter().map(|f| self.params.joiner.w_enc.matvec(f)).collect()
    }

    pub fn project_predictor(&self, state: &PredictorState) -> Vec<f64> {
        self.params.joiner.w_pred.matvec(&state.output)
    }

    /// Joiner output for one node from pre-projected encoder and predictor
    /// contributions. Returns `(logits, hidden)`.
    pub fn joiner_row(&self, enc_proj: Option<&[f64]>, pred_proj: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let j = &self.params.joiner;
        let hidden: Vec<f64> = (0..pred_proj.len())
            .map(|i| {
                let a = enc_proj.map_or(0.0, |e| e[i]);
                (a + pred_proj[i] + j.bias.as_slice()[i]).tanh()
            })
            .collect();
        let logits = j
            .w_out
            .matvec(&hidden)
            .iter()
            .zip(j.b_out.as_slice())
            .map(|(a, b)| a + b)
            .collect();
        (logits, hidden)
    }

    fn build_grid(
        &self,
        enc: &EncoderOutput,
        enc_proj: &[Vec<f64>],
        pred: &PredictorStates,
    ) -> (WeightGrid, Vec<f64>) {
        let frames = enc.len();
        let u_len = pred.tokens.len();
        let jdim = self.params.config.joiner_dim;
        let mut grid = WeightGrid::zeros(frames, u_len, self.params.config.vocab);
        let mut hidden = vec![0.0; (frames + 1) * (u_len + 1) * jdim];
        let pred_proj: Vec<Vec<f64>> = pred.states.iter().map(|s| self.project_predictor(s)).collect();
        for t in 0..=frames {
            let ep = frame_for_node(t, frames).map(|f| enc_proj[f].as_slice());
            for u in 0..=u_len {
                let (logits, h) = self.joiner_row(ep, &pred_proj[u]);
                grid.row_mut(t, u).copy_from_slice(&logits);
                let o = (t * (u_len + 1) + u) * jdim;
                hidden[o..o + jdim].copy_from_slice(&h);
            }
        }
        (grid, hidden)
    }

    /// Unnormalized log-weights for one token sequence.
    pub fn joint_grid(&self, enc: &EncoderOutput, pred: &PredictorStates) -> Result<WeightGrid> {
        if let Some(f) = enc.frames.first() {
            if f.len() != self.params.config.enc_dim {
                return Err(Error::LengthMismatch {
                    what: "encoder output dimension",
                    expected: self.params.config.enc_dim,
                    actual: f.len(),
                });
            }
        }
        let proj = self.project_encoder(enc);
        Ok(self.build_grid(enc, &proj, pred).0)
    }

    /// Encodes once and builds one grid per hypothesis, keeping activations
    /// for [`Transducer::backprop`].
    pub fn forward(
        &self,
        features: &Matrix,
        hyps: &[TokenSequence],
        topology: &Topology,
    ) -> Result<ForwardPass> {
        let enc = self.encode(features)?;
        let proj = self.project_encoder(&enc);
        let mut out = Vec::with_capacity(hyps.len());
        for z in hyps {
            let pred = self.predict(z)?;
            let (mut grid, hidden) = self.build_grid(&enc, &proj, &pred);
            grid.set_topology(topology.clone());
            out.push(HypothesisPass { pred, grid, hidden });
        }
        Ok(ForwardPass {
            version: self.params.version(),
            enc,
            hyps: out,
        })
    }

    /// Reverse-mode gradients of a scalar whose gradient w.r.t. each
    /// hypothesis grid is `grid_grads[i]`.
    pub fn backprop(&self, pass: &ForwardPass, grid_grads: &[WeightGrid]) -> Result<Gradients> {
        let current = self.params.version();
        if pass.version != current {
            return Err(Error::StaleCache {
                cached: pass.version,
                current,
            });
        }
        if grid_grads.len() != pass.hyps.len() {
            return Err(Error::LengthMismatch {
                what: "grid gradients vs hypotheses",
                expected: pass.hyps.len(),
                actual: grid_grads.len(),
            });
        }
        let cfg = &self.params.config;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let frames = pass.enc.len();
        let jdim = cfg.joiner_dim;
        let mut d_enc_proj = vec![vec![0.0; jdim]; frames];

        for (hyp, gg) in pass.hyps.iter().zip(grid_grads) {
            if gg.as_slice().len() != hyp.grid.as_slice().len() {
                return Err(Error::LengthMismatch {
                    what: "grid gradient size",
                    expected: hyp.grid.as_slice().len(),
                    actual: gg.as_slice().len(),
                });
            }
            let u_len = hyp.pred.tokens.len();
            let mut d_pred_proj = vec![vec![0.0; jdim]; u_len + 1];
            for t in 0..=frames {
                let frame = frame_for_node(t, frames);
                for u in 0..=u_len {
                    let g_row = gg.row(t, u);
                    if g_row.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let o = (t * (u_len + 1) + u) * jdim;
                    let h = &hyp.hidden[o..o + jdim];
                    grads.joiner.b_out.add_acc(g_row);
                    grads.joiner.w_out.outer_acc(g_row, h);
                    let mut dh = vec![0.0; jdim];
                    p.joiner.w_out.tmatvec_acc(g_row, &mut dh);
                    for i in 0..jdim {
                        dh[i] *= 1.0 - h[i] * h[i];
                    }
                    grads.joiner.bias.add_acc(&dh);
                    if let Some(f) = frame {
                        d_enc_proj[f].iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
                    }
                    d_pred_proj[u].iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
                }
            }
            let mut d_states = Vec::with_capacity(u_len + 1);
            for (st, d) in hyp.pred.states.iter().zip(&d_pred_proj) {
                grads.joiner.w_pred.outer_acc(d, &st.output);
                let mut ds = vec![0.0; cfg.pred_dim];
                p.joiner.w_pred.tmatvec_acc(d, &mut ds);
                d_states.push(ds);
            }
            self.predictor.backward(
                &p.predictor,
                hyp.pred.tokens.as_slice(),
                &hyp.pred.states,
                &d_states,
                &mut grads.predictor,
            );
        }

        let e = &p.encoder;
        for s in 0..frames {
            let d = &d_enc_proj[s];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let enc = &pass.enc.frames[s];
            grads.joiner.w_enc.outer_acc(d, enc);
            let mut d_enc = vec![0.0; cfg.enc_dim];
            p.joiner.w_enc.tmatvec_acc(d, &mut d_enc);
            let d_pre2: Vec<f64> = d_enc.iter().zip(enc).map(|(a, y)| a * (1.0 - y * y)).collect();
            let h1 = &pass.enc.hidden[s];
            grads.encoder.w2.outer_acc(&d_pre2, h1);
            grads.encoder.b2.add_acc(&d_pre2);
            let mut d_h1 = vec![0.0; cfg.enc_hidden];
            e.w2.tmatvec_acc(&d_pre2, &mut d_h1);
            let d_pre1: Vec<f64> = d_h1.iter().zip(h1).map(|(a, y)| a * (1.0 - y * y)).collect();
            grads.encoder.w1.outer_acc(&d_pre1, &pass.enc.windows[s]);
            grads.encoder.b1.add_acc(&d_pre1);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    fn features(frames: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = substream(seed, "test-features");
        Matrix::from_vec(frames, dim, (0..frames * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn empty_input_encodes_to_nothing() {
        let m = Transducer::new(&ModelConfig::small(3, 2), 1).unwrap();
        let enc = m.encode(&Matrix::zeros(0, 3)).unwrap();
        assert!(enc.is_empty());
        let grid = m.joint_grid(&enc, &m.predict(&TokenSequence::empty()).unwrap()).unwrap();
        assert_eq!(grid.frames(), 0);
    }

    #[test]
    fn encoder_is_causal() {
        let m = Transducer::new(&ModelConfig::small(3, 2), 1).unwrap();
        let x = features(5, 3, 0);
        let mut y = x.clone();
        y.row_mut(2).iter_mut().for_each(|v| *v += 0.5);
        let a = m.encode(&x).unwrap();
        let b = m.encode(&y).unwrap();
        assert_eq!(a.frames[0], b.frames[0]);
        assert_eq!(a.frames[1], b.frames[1]);
        assert_ne!(a.frames[2], b.frames[2]);
    }

    #[test]
    fn encoder_window_matches_truncated_input() {
        let mut cfg = ModelConfig::small(3, 2);
        cfg.context = 2;
        let m = Transducer::new(&cfg, 1).unwrap();
        let x = features(5, 3, 1);
        let sub = Matrix::from_rows(&[x.row(1).to_vec(), x.row(2).to_vec(), x.row(3).to_vec()]);
        let full = m.encode(&x).unwrap();
        let part = m.encode(&sub).unwrap();
        assert_eq!(full.frames[3], part.frames[2]);
    }

    #[test]
    fn feature_dim_mismatch() {
        let m = Transducer::new(&ModelConfig::small(3, 2), 1).unwrap();
        assert!(m.encode(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn zero_joiner_gives_zero_grid() {
        let mut m = Transducer::new(&ModelConfig::small(3, 2), 1).unwrap();
        m.params.joiner.w_out.fill(0.0);
        m.params.joiner.b_out.fill(0.0);
        let enc = m.encode(&features(4, 3, 2)).unwrap();
        let z = TokenSequence::new(vec![1, 2]).unwrap();
        let g = m.joint_grid(&enc, &m.predict(&z).unwrap()).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_encoder_gives_time_invariant_rows() {
        let m = Transducer::new(&ModelConfig::small(3, 2), 1).unwrap();
        let row = vec![0.3, -0.2, 0.1];
        let x = Matrix::from_rows(&vec![row; 4]);
        // Frames past the context window see identical inputs.
        let enc = m.encode(&x).unwrap();
        let z = TokenSequence::new(vec![2]).unwrap();
        let g = m.joint_grid(&enc, &m.predict(&z).unwrap()).unwrap();
        for u in 0..=1 {
            assert_eq!(g.row(2, u), g.row(3, u));
            assert_eq!(g.row(3, u), g.row(4, u));
            assert_ne!(g.row(0, u), g.row(3, u));
        }
    }

    #[test]
    fn hand_computed_single_node() {
        let cfg = ModelConfig {
            feat_dim: 1,
            context: 1,
            enc_hidden: 1,
            enc_dim: 1,
            embed_dim: 1,
            pred_dim: 1,
            joiner_dim: 1,
            vocab: 1,
            predictor: "limited:1".into(),
        };
        let mut m = Transducer::new(&cfg, 0).unwrap();
        {
            let p = &mut m.params;
            p.encoder.w1 = Matrix::from_vec(1, 1, vec![0.5]);
            p.encoder.b1 = Matrix::from_vec(1, 1, vec![0.1]);
            p.encoder.w2 = Matrix::from_vec(1, 1, vec![2.0]);
            p.encoder.b2 = Matrix::from_vec(1, 1, vec![0.0]);
            p.predictor[0] = Matrix::from_vec(2, 1, vec![0.4, -0.3]);
            p.predictor[1] = Matrix::from_vec(1, 1, vec![1.5]);
            p.predictor[2] = Matrix::from_vec(1, 1, vec![0.2]);
            p.joiner.w_enc = Matrix::from_vec(1, 1, vec![0.7]);
            p.joiner.w_pred = Matrix::from_vec(1, 1, vec![-0.6]);
            p.joiner.bias = Matrix::from_vec(1, 1, vec![0.05]);
            p.joiner.w_out = Matrix::from_vec(2, 1, vec![1.2, -0.8]);
            p.joiner.b_out = Matrix::from_vec(2, 1, vec![0.3, 0.0]);
        }
        let enc = m.encode(&Matrix::from_vec(1, 1, vec![0.9])).unwrap();
        let pred = m.predict(&TokenSequence::new(vec![1]).unwrap()).unwrap();
        let g = m.joint_grid(&enc, &pred).unwrap();

        let e = (2.0 * (0.5f64 * 0.9 + 0.1).tanh()).tanh();
        let s1 = (1.5f64 * -0.3 + 0.2).tanh();
        let h = (0.7 * e - 0.6 * s1 + 0.05).tanh();
        assert!((g.get(0, 1, 0) - (1.2 * h + 0.3)).abs() < 1e-15);
        assert!((g.get(0, 1, 1) - (-0.8 * h)).abs() < 1e-15);
        // t = T uses the same (last) frame.
        assert_eq!(g.row(1, 1), g.row(0, 1));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Transducer::new(&ModelConfig::small(2, 2), 1).unwrap();
        let z = TokenSequence::new(vec![1]).unwrap();
        let pass = m.forward(&features(3, 2, 0), &[z], &Topology::default()).unwrap();
        let gg: Vec<WeightGrid> = pass.hyps.iter().map(|h| h.grid.zeros_like()).collect();
        assert!(m.backprop(&pass, &gg).is_ok());
        m.params.tensors_mut()[0].as_mut_slice()[0] += 1.0;
        assert!(matches!(m.backprop(&pass, &gg), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn zero_grid_gradient_gives_zero_parameter_gradient() {
        let m = Transducer::new(&ModelConfig::small(2, 3), 1).unwrap();
        let z = TokenSequence::new(vec![3, 1]).unwrap();
        let pass = m.forward(&features(3, 2, 0), &[z], &Topology::default()).unwrap();
        let gg: Vec<WeightGrid> = pass.hyps.iter().map(|h| h.grid.zeros_like()).collect();
        let grads = m.backprop(&pass, &gg).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_is_a_fold_of_steps() {
        for spec in ["recurrent", "limited:2"] {
            let mut cfg = ModelConfig::small(2, 4);
            cfg.predictor = spec.into();
            let m = Transducer::new(&cfg, 5).unwrap();
            let z = TokenSequence::new(vec![1, 4, 4]).unwrap();
            let states = m.predict(&z).unwrap();
            assert_eq!(states.states[0], m.predictor_start());
            assert_eq!(m.predict(&TokenSequence::empty()).unwrap().states, vec![m.predictor_start()]);
            let mut s = m.predictor_start();
            for (u, &k) in z.iter().enumerate() {
                s = m.predictor_step(&s, k).unwrap();
                assert_eq!(s, states.states[u + 1]);
            }
            assert!(m.predictor_step(&s, 5).is_err());
            assert!(m.predictor_step(&s, 0).is_err());
        }
    }
}
