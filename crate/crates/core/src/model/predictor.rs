//! Token-history predictors.
//!
//! Two strategies share one trait: a gated recurrence over the full token
//! history (`recurrent`) and a feed-forward net over the last `n` tokens
//! (`limited:n`). Both consume the start symbol (index 0) first, so the state
//! for the empty prefix is `step(initial, 0)`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::matrix::{sigmoid, Matrix};
use crate::model::params::ModelConfig;
use crate::registry::{Registry, StrategySpec};

pub const START: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    /// Vector fed to the joiner.
    pub output: Vec<f64>,
    /// Recurrent memory (empty for limited history).
    pub memory: Vec<f64>,
    /// Last `n` inputs, oldest first (limited history only).
    pub history: Vec<usize>,
    /// Strategy-specific activations kept for backprop.
    pub trace: Vec<f64>,
}

pub trait Predictor: Send + Sync {
    fn spec(&self) -> StrategySpec;

    /// `(kind, order)` pair stored in checkpoint headers.
    fn code(&self) -> (u64, u64);

    fn shapes(&self, cfg: &ModelConfig) -> Vec<(&'static str, usize, usize)>;

    /// State before anything, including the start symbol, has been read.
    fn initial(&self, params: &[Matrix]) -> PredictorState;

    fn step(&self, params: &[Matrix], state: &PredictorState, token: usize) -> PredictorState;

    fn start(&self, params: &[Matrix]) -> PredictorState {
        self.step(params, &self.initial(params), START)
    }

    /// Accumulates parameter gradients given `d_outputs[u]`, the gradient
    /// w.r.t. the output of `states[u]` (the state after `tokens[..u]`).
    fn backward(
        &self,
        params: &[Matrix],
        tokens: &[usize],
        states: &[PredictorState],
        d_outputs: &[Vec<f64>],
        grads: &mut [Matrix],
    );
}

pub fn predictor_registry() -> &'static Registry<dyn Predictor> {
    static REG: OnceLock<Registry<dyn Predictor>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn Predictor> = Registry::new("predictor");
        reg.register("recurrent", |_| Ok(Box::new(RecurrentPredictor)));
        reg.register("limited", |spec| {
            let order = spec.arg_usize(2)?;
            if order == 0 {
                return Err(Error::InvalidArgument("limited history order must be >= 1".into()));
            }
            Ok(Box::new(LimitedHistoryPredictor { order }))
        });
        reg
    })
}

pub fn predictor_spec_from_code(kind: u64, order: u64) -> Result<String> {
    match kind {
        0 => Ok("recurrent".into()),
        1 => Ok(format!("limited:{order}")),
        other => Err(Error::CheckpointCorrupt(format!("unknown predictor kind {other}"))),
    }
}

/// `h' = (1-g) h + g c`, with `g = sigmoid(Wg [e; h] + bg)` and
/// `c = tanh(Wc [e; h] + bc)`. Output is `h'`.
pub struct RecurrentPredictor;

// params: embed, wg, bg, wc, bc
impl RecurrentPredictor {
    fn input(params: &[Matrix], memory: &[f64], token: usize) -> Vec<f64> {
        let mut x = params[0].row(token).to_vec();
        x.extend_from_slice(memory);
        x
    }
}

impl Predictor for RecurrentPredictor {
    fn spec(&self) -> StrategySpec {
        StrategySpec::parse("recurrent")
    }

    fn code(&self) -> (u64, u64) {
        (0, 0)
    }

    fn shapes(&self, c: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
        let x = c.embed_dim + c.pred_dim;
        vec![
            ("embed", c.vocab + 1, c.embed_dim),
            ("wg", c.pred_dim, x),
            ("bg", c.pred_dim, 1),
            ("wc", c.pred_dim, x),
            ("bc", c.pred_dim, 1),
        ]
    }

    fn initial(&self, params: &[Matrix]) -> PredictorState {
        PredictorState {
            output: Vec::new(),
            memory: vec![0.0; params[1].rows()],
            history: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn step(&self, params: &[Matrix], state: &PredictorState, token: usize) -> PredictorState {
        let x = Self::input(params, &state.memory, token);
        let pre_g = params[1].matvec(&x);
        let pre_c = params[3].matvec(&x);
        let p = pre_g.len();
        let mut trace = Vec::with_capacity(2 * p);
        let mut h = Vec::with_capacity(p);
        let mut gates = Vec::with_capacity(p);
        for i in 0..p {
            let g = sigmoid(pre_g[i] + params[2].as_slice()[i]);
            let c = (pre_c[i] + params[4].as_slice()[i]).tanh();
            h.push((1.0 - g) * state.memory[i] + g * c);
            gates.push(g);
            trace.push(c);
        }
        gates.extend(trace);
        PredictorState {
            output: h.clone(),
            memory: h,
            history: Vec::new(),
            trace: gates,
        }
    }

    fn backward(
        &self,
        params: &[Matrix],
        tokens: &[usize],
        states: &[PredictorState],
        d_outputs: &[Vec<f64>],
        grads: &mut [Matrix],
    ) {
        let p = params[1].rows();
        let e = params[0].cols();
        let zero = vec![0.0; p];
        let mut carry = vec![0.0; p];
        for u in (0..states.len()).rev() {
            let token = if u == 0 { START } else { tokens[u - 1] };
            let prev: &[f64] = if u == 0 { &zero } else { &states[u - 1].memory };
            let st = &states[u];
            let (gates, cand) = st.trace.split_at(p);
            let dh: Vec<f64> = d_outputs[u].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut d_pre_g = vec![0.0; p];
            let mut d_pre_c = vec![0.0; p];
            let mut d_prev = vec![0.0; p];
            for i in 0..p {
                let g = gates[i];
                let c = cand[i];
                d_pre_g[i] = dh[i] * (c - prev[i]) * g * (1.0 - g);
                d_pre_c[i] = dh[i] * g * (1.0 - c * c);
                d_prev[i] = dh[i] * (1.0 - g);
            }
            let x = Self::input(params, prev, token);
            grads[1].outer_acc(&d_pre_g, &x);
            grads[2].add_acc(&d_pre_g);
            grads[3].outer_acc(&d_pre_c, &x);
            grads[4].add_acc(&d_pre_c);
            let mut dx = vec![0.0; e + p];
            params[1].tmatvec_acc(&d_pre_g, &mut dx);
            params[3].tmatvec_acc(&d_pre_c, &mut dx);
            grads[0].row_mut(token).iter_mut().zip(&dx[..e]).for_each(|(g, d)| *g += d);
            for i in 0..p {
                d_prev[i] += dx[e + i];
            }
            carry = d_prev;
        }
    }
}

/// `s = tanh(W [e(y_{u-n+1}); ...; e(y_u)] + b)`; positions before the
/// start symbol are padded with the start embedding.
pub struct LimitedHistoryPredictor {
    pub order: usize,
}

// params: embed, w, b
impl LimitedHistoryPredictor {
    fn input(&self, params: &[Matrix], history: &[usize]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.order * params[0].cols());
        for &k in history {
            x.extend_from_slice(params[0].row(k));
        }
        x
    }
}

impl Predictor for LimitedHistoryPredictor {
    fn spec(&self) -> StrategySpec {
        StrategySpec::parse(&format!("limited:{}", self.order))
    }

    fn code(&self) -> (u64, u64) {
        (1, self.order as u64)
    }

    fn shapes(&self, c: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
        vec![
            ("embed", c.vocab + 1, c.embed_dim),
            ("w", c.pred_dim, self.order * c.embed_dim),
            ("b", c.pred_dim, 1),
        ]
    }

    fn initial(&self, _params: &[Matrix]) -> PredictorState {
        PredictorState {
            output: Vec::new(),
            memory: Vec::new(),
            history: vec![START; self.order],
            trace: Vec::new(),
        }
    }

    fn step(&self, params: &[Matrix], state: &PredictorState, token: usize) -> PredictorState {
        let mut history = state.history[1..].to_vec();
        history.push(token);
        let x = self.input(params, &history);
        let pre = params[1].matvec(&x);
        let output = pre
            .iter()
            .zip(params[2].as_slice())
            .map(|(a, b)| (a + b).tanh())
            .collect();
        PredictorState {
            output,
            memory: Vec::new(),
            history,
            trace: Vec::new(),
        }
    }

    fn backward(
        &self,
        params: &[Matrix],
        _tokens: &[usize],
        states: &[PredictorState],
        d_outputs: &[Vec<f64>],
        grads: &mut [Matrix],
    ) {
        let e = params[0].cols();
        for (st, d) in states.iter().zip(d_outputs) {
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let d_pre: Vec<f64> = d
                .iter()
                .zip(&st.output)
                .map(|(dv, s)| dv * (1.0 - s * s))
                .collect();
            let x = self.input(params, &st.history);
            grads[1].outer_acc(&d_pre, &x);
            grads[2].add_acc(&d_pre);
            let mut dx = vec![0.0; x.len()];
            params[1].tmatvec_acc(&d_pre, &mut dx);
            for (slot, &k) in st.history.iter().enumerate() {
                grads[0]
                    .row_mut(k)
                    .iter_mut()
                    .zip(&dx[slot * e..(slot + 1) * e])
                    .for_each(|(g, v)| *g += v);
            }
        }
    }
}
