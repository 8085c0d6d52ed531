//! Finite-difference gradient checks, shared by unit tests, the acceptance
//! suite and the `grad-check` command.
//!
//! Relative error is `|a - b| / max(|a|, |b|, floor)`. The floor keeps
//! near-zero gradients from turning roundoff into huge ratios.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::lattice::{forward_backward, forward_score, TokenSequence, Topology, WeightGrid};
use crate::losses::{
    global_nbest_loss, interpolated_loss, local_nll, total_objective, HypothesisSet,
};
use crate::model::{Matrix, ModelConfig, ModelParams, Transducer};
use crate::rng::{substream, Rng};

pub const GRID_STEP: f64 = 1e-6;
pub const PARAM_STEP: f64 = 1e-5;
/// Central differences at `h = 1e-6` carry roughly `1e-9` absolute roundoff
/// on lattice scores, so grid gradients below this are compared absolutely.
pub const GRID_FLOOR: f64 = 1e-2;
pub const PARAM_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_grid(rng: &mut Rng, frames: usize, tokens: usize, vocab: usize, scale: f64) -> WeightGrid {
    let mut g = WeightGrid::zeros(frames, tokens, vocab);
    g.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-scale..=scale));
    g
}

pub fn random_tokens(rng: &mut Rng, len: usize, vocab: usize) -> TokenSequence {
    TokenSequence::new((0..len).map(|_| rng.gen_range(1..=vocab)).collect()).expect("non-blank")
}

/// `n` distinct random sequences with lengths in `0..=max_len`; the first is
/// `first`.
pub fn random_hypotheses(
    rng: &mut Rng,
    first: TokenSequence,
    n: usize,
    max_len: usize,
    vocab: usize,
) -> Vec<TokenSequence> {
    let mut out = vec![first];
    let mut attempts = 0;
    while out.len() < n && attempts < 1000 {
        attempts += 1;
        let len = rng.gen_range(0..=max_len);
        let z = random_tokens(rng, len, vocab);
        if !out.contains(&z) {
            out.push(z);
        }
    }
    out
}

/// Max relative error between `analytic` and central differences of `f`
/// over every entry of every grid.
pub fn grid_gradient_error(
    f: &dyn Fn(&[WeightGrid]) -> f64,
    grids: &[WeightGrid],
    analytic: &[WeightGrid],
    h: f64,
) -> f64 {
    let mut work = grids.to_vec();
    let mut worst: f64 = 0.0;
    for gi in 0..grids.len() {
        for k in 0..grids[gi].as_slice().len() {
            let x = grids[gi].as_slice()[k];
            work[gi].as_mut_slice()[k] = x + h;
            let up = f(&work);
            work[gi].as_mut_slice()[k] = x - h;
            let down = f(&work);
            work[gi].as_mut_slice()[k] = x;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[gi].as_slice()[k], fd, GRID_FLOOR));
        }
    }
    worst
}

/// Max relative error per parameter tensor, `(name, err)`.
pub fn param_gradient_error(
    f: &dyn Fn(&ModelParams) -> f64,
    params: &ModelParams,
    analytic: &ModelParams,
    h: f64,
) -> Vec<(String, f64)> {
    let names = params.tensor_names();
    let base = params.flatten();
    let grads = analytic.flatten();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(names.len());
    let mut offset = 0;
    for (name, tensor) in names.into_iter().zip(params.tensors()) {
        let mut worst: f64 = 0.0;
        for k in offset..offset + tensor.len() {
            let mut v = base.clone();
            v[k] = base[k] + h;
            work.unflatten(&v).expect("same size");
            let up = f(&work);
            v[k] = base[k] - h;
            work.unflatten(&v).expect("same size");
            let down = f(&work);
            worst = worst.max(rel_err(grads[k], (up - down) / (2.0 * h), PARAM_FLOOR));
        }
        offset += tensor.len();
        out.push((name, worst));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub occupancy: f64,
    pub local_nll: f64,
    pub global_nbest: f64,
    pub interpolated: f64,
    pub total_objective: f64,
    /// Per predictor strategy and parameter tensor.
    pub parameters: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_grid(&self) -> f64 {
        [
            self.occupancy,
            self.local_nll,
            self.global_nbest,
            self.interpolated,
            self.total_objective,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn max_parameter(&self) -> f64 {
        self.parameters.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Grid-level checks on `instances` random lattices, then end-to-end
/// parameter checks of the total objective for both predictor strategies.
pub fn run_suite(seed: u64, instances: usize) -> Result<GradCheckReport> {
    let mut rng = substream(seed, "gradcheck");
    let mut rep = GradCheckReport {
        occupancy: 0.0,
        local_nll: 0.0,
        global_nbest: 0.0,
        interpolated: 0.0,
        total_objective: 0.0,
        parameters: Vec::new(),
    };
    for _ in 0..instances {
        let t = rng.gen_range(1..=4);
        let u = rng.gen_range(0..=3);
        let k = rng.gen_range(1..=3);
        let z = random_tokens(&mut rng, u, k);
        let g = random_grid(&mut rng, t, u, k, 4.0);

        let (_, occ) = forward_backward(&g, &z)?;
        let zc = z.clone();
        rep.occupancy = rep.occupancy.max(grid_gradient_error(
            &|gs| forward_score(&gs[0], &zc).map(|s| s.value()).unwrap_or(f64::NAN),
            std::slice::from_ref(&g),
            &[occ],
            GRID_STEP,
        ));

        let (_, lg) = local_nll(&g, &z)?;
        rep.local_nll = rep.local_nll.max(grid_gradient_error(
            &|gs| local_nll(&gs[0], &zc).map(|r| r.0).unwrap_or(f64::NAN),
            std::slice::from_ref(&g),
            &[lg],
            GRID_STEP,
        ));

        let hyps = random_hypotheses(&mut rng, z.clone(), 3, 2, k);
        let grids: Vec<WeightGrid> = hyps
            .iter()
            .map(|h| random_grid(&mut rng, t, h.len(), k, 4.0))
            .collect();
        let h = HypothesisSet::new(hyps, 0)?;
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let lambda: f64 = rng.gen_range(0.0..=0.1);

        let out = global_nbest_loss(&grids, &h)?;
        rep.global_nbest = rep.global_nbest.max(grid_gradient_error(
            &|gs| global_nbest_loss(gs, &h).map(|o| o.loss).unwrap_or(f64::NAN),
            &grids,
            &out.grads,
            GRID_STEP,
        ));
        let out = interpolated_loss(&grids, &h, alpha)?;
        rep.interpolated = rep.interpolated.max(grid_gradient_error(
            &|gs| interpolated_loss(gs, &h, alpha).map(|o| o.loss).unwrap_or(f64::NAN),
            &grids,
            &out.grads,
            GRID_STEP,
        ));
        let out = total_objective(&grids, &h, alpha, lambda)?;
        rep.total_objective = rep.total_objective.max(grid_gradient_error(
            &|gs| total_objective(gs, &h, alpha, lambda).map(|o| o.loss).unwrap_or(f64::NAN),
            &grids,
            &out.grads,
            GRID_STEP,
        ));
    }

    for predictor in ["recurrent", "limited:2"] {
        for (name, err) in end_to_end(&mut rng, predictor)? {
            let key = format!("{predictor}/{name}");
            match rep.parameters.iter_mut().find(|(n, _)| *n == key) {
                Some(slot) => slot.1 = slot.1.max(err),
                None => rep.parameters.push((key, err)),
            }
        }
    }
    Ok(rep)
}

fn tiny_config(predictor: &str) -> ModelConfig {
    ModelConfig {
        feat_dim: 3,
        context: 2,
        enc_hidden: 5,
        enc_dim: 4,
        embed_dim: 3,
        pred_dim: 4,
        joiner_dim: 5,
        vocab: 3,
        predictor: predictor.into(),
    }
}

/// Total objective (random alpha, lambda, three hypotheses) on a T=3, U=2
/// toy, checked against central differences for every parameter.
pub fn end_to_end(rng: &mut Rng, predictor: &str) -> Result<Vec<(String, f64)>> {
    let cfg = tiny_config(predictor);
    let mut params = ModelParams::init(&cfg, rng.gen())?;
    // Larger weights than the default init so gradients are not all tiny.
    let scaled: Vec<f64> = params.flatten().iter().map(|v| v * 8.0).collect();
    params.unflatten(&scaled)?;
    let model = Transducer::from_params(params)?;
    let frames = 3;
    let x = Matrix::from_vec(
        frames,
        cfg.feat_dim,
        (0..frames * cfg.feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let reference = random_tokens(rng, 2, cfg.vocab);
    let hyps = random_hypotheses(rng, reference, 3, 3, cfg.vocab);
    let h = HypothesisSet::new(hyps, 0)?;
    let alpha: f64 = rng.gen_range(0.0..=1.0);
    let lambda: f64 = rng.gen_range(0.0..=0.1);
    let topo = Topology::default();

    let pass = model.forward(&x, h.hyps(), &topo)?;
    let grids: Vec<WeightGrid> = pass.hyps.iter().map(|p| p.grid.clone()).collect();
    let out = total_objective(&grids, &h, alpha, lambda)?;
    let analytic = model.backprop(&pass, &out.grads)?;

    let f = |p: &ModelParams| -> f64 {
        let m = Transducer::from_params(p.clone()).expect("valid");
        let pass = m.forward(&x, h.hyps(), &topo).expect("forward");
        let grids: Vec<WeightGrid> = pass.hyps.iter().map(|p| p.grid.clone()).collect();
        total_objective(&grids, &h, alpha, lambda).map(|o| o.loss).unwrap_or(f64::NAN)
    };
    Ok(param_gradient_error(&f, &model.params, &analytic, PARAM_STEP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0, 1e-3), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
        assert!((rel_err(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn small_suite_passes() {
        let rep = run_suite(1, 5).unwrap();
        assert!(rep.max_grid() <= 1e-6, "{rep:?}");
        assert!(rep.max_parameter() <= 1e-4, "{rep:?}");
    }
}
