//! Encoder, predictor and joiner producing the per-node weight grid.

pub mod checkpoint;
mod matrix;
mod network;
mod params;
mod predictor;

pub use matrix::Matrix;
pub use network::{
    frame_for_node, EncoderOutput, ForwardPass, HypothesisPass, PredictorStates, Transducer,
};
pub use params::{EncoderParams, Gradients, JoinerParams, ModelConfig, ModelParams, INIT_BOUND};
pub use predictor::{
    predictor_registry, predictor_spec_from_code, LimitedHistoryPredictor, Predictor,
    PredictorState, RecurrentPredictor, START,
};
