use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::matrix::Matrix;
use crate::model::predictor::predictor_registry;
use crate::registry::StrategySpec;
use crate::rng::substream;

pub const INIT_BOUND: f64 = 0.1;

/// Layer sizes of the toy streaming transducer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feat_dim: usize,
    /// Past frames seen by the encoder at each step, current frame included.
    pub context: usize,
    pub enc_hidden: usize,
    pub enc_dim: usize,
    pub embed_dim: usize,
    pub pred_dim: usize,
    pub joiner_dim: usize,
    /// K, excluding blank.
    pub vocab: usize,
    /// Predictor strategy, e.g. `recurrent` or `limited:2`.
    pub predictor: String,
}

impl ModelConfig {
    pub fn small(feat_dim: usize, vocab: usize) -> Self {
        ModelConfig {
            feat_dim,
            context: 3,
            enc_hidden: 16,
            enc_dim: 16,
            embed_dim: 8,
            pred_dim: 16,
            joiner_dim: 16,
            vocab,
            predictor: "recurrent".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feat_dim", self.feat_dim),
            ("context", self.context),
            ("enc_hidden", self.enc_hidden),
            ("enc_dim", self.enc_dim),
            ("embed_dim", self.embed_dim),
            ("pred_dim", self.pred_dim),
            ("joiner_dim", self.joiner_dim),
            ("vocab", self.vocab),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        predictor_registry().build_str(&self.predictor).map(|_| ())
    }

    pub fn predictor_spec(&self) -> StrategySpec {
        StrategySpec::parse(&self.predictor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinerParams {
    pub w_enc: Matrix,
    pub w_pred: Matrix,
    pub bias: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

/// All trainable weights, plus the interpolation weight the model is used
/// at. Also serves as the gradient container (same shapes).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub alpha: f64,
    pub encoder: EncoderParams,
    /// Layout owned by the predictor strategy.
    pub predictor: Vec<Matrix>,
    pub joiner: JoinerParams,
    version: u64,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "init");
        Ok(Self::build(config, &mut |r, c| Matrix::uniform(r, c, INIT_BOUND, &mut rng)))
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, &mut Matrix::zeros))
    }

    fn build(config: &ModelConfig, make: &mut dyn FnMut(usize, usize) -> Matrix) -> Self {
        let c = config;
        let encoder = EncoderParams {
            w1: make(c.enc_hidden, c.context * c.feat_dim),
            b1: make(c.enc_hidden, 1),
            w2: make(c.enc_dim, c.enc_hidden),
            b2: make(c.enc_dim, 1),
        };
        let predictor = predictor_registry()
            .build_str(&c.predictor)
            .expect("validated predictor spec")
            .shapes(c)
            .into_iter()
            .map(|(_, r, cols)| make(r, cols))
            .collect();
        let joiner = JoinerParams {
            w_enc: make(c.joiner_dim, c.enc_dim),
            w_pred: make(c.joiner_dim, c.pred_dim),
            bias: make(c.joiner_dim, 1),
            w_out: make(c.vocab + 1, c.joiner_dim),
            b_out: make(c.vocab + 1, 1),
        };
        ModelParams {
            config: config.clone(),
            alpha: 1.0,
            encoder,
            predictor,
            joiner,
            version: 0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|m| m.fill(0.0));
        z.version = 0;
        z
    }

    /// Increments on every mutable access; forward caches remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let pred_names: Vec<&str> = predictor_registry()
            .build_str(&self.config.predictor)
            .map(|p| p.shapes(&self.config).into_iter().map(|(n, _, _)| n).collect())
            .unwrap_or_default();
        let mut names: Vec<String> = ["w1", "b1", "w2", "b2"]
            .iter()
            .map(|n| format!("encoder.{n}"))
            .collect();
        names.extend(pred_names.iter().map(|n| format!("predictor.{n}")));
        names.extend(
            ["w_enc", "w_pred", "bias", "w_out", "b_out"]
                .iter()
                .map(|n| format!("joiner.{n}")),
        );
        names
    }

    /// Tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let e = &self.encoder;
        let j = &self.joiner;
        let mut v = vec![&e.w1, &e.b1, &e.w2, &e.b2];
        v.extend(self.predictor.iter());
        v.extend([&j.w_enc, &j.w_pred, &j.bias, &j.w_out, &j.b_out]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.version += 1;
        let e = &mut self.encoder;
        let j = &mut self.joiner;
        let mut v = vec![&mut e.w1, &mut e.b1, &mut e.w2, &mut e.b2];
        v.extend(self.predictor.iter_mut());
        v.extend([
            &mut j.w_enc,
            &mut j.w_pred,
            &mut j.bias,
            &mut j.w_out,
            &mut j.b_out,
        ]);
        v
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for m in self.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::LengthMismatch {
                what: "flattened parameters",
                expected: self.num_values(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
    }
}

pub type Gradients = ModelParams;
