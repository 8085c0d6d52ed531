//! Training objectives and their gradients w.r.t. the raw weight grids.
//!
//! Every loss takes one raw (unnormalized) grid per hypothesis, aligned with a
//! [`HypothesisSet`], and returns the value plus one gradient grid per
//! hypothesis, ready for [`crate::model::Transducer::backprop`].

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{
    apply_partial_normalization, forward_backward, partial_normalization_vjp, TokenSequence,
    WeightGrid,
};
use crate::logspace::{lse, softmax};
use crate::registry::{Registry, StrategySpec};

pub const DEFAULT_LAMBDA: f64 = 0.01;

/// Distinct token sequences with the reference present exactly once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HypothesisSet {
    hyps: Vec<TokenSequence>,
    ref_index: usize,
}

impl HypothesisSet {
    pub fn new(hyps: Vec<TokenSequence>, ref_index: usize) -> Result<Self> {
        if ref_index >= hyps.len() {
            return Err(Error::MissingReference);
        }
        let mut seen = HashSet::new();
        for h in &hyps {
            if !seen.insert(h) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate hypothesis [{}]",
                    h.to_text()
                )));
            }
        }
        Ok(HypothesisSet { hyps, ref_index })
    }

    pub fn reference_only(reference: TokenSequence) -> Self {
        HypothesisSet {
            hyps: vec![reference],
            ref_index: 0,
        }
    }

    /// Reference first, then competitors in order with duplicates dropped.
    pub fn from_parts(reference: TokenSequence, competitors: &[TokenSequence]) -> Self {
        let mut hyps = vec![reference];
        for c in competitors {
            if !hyps.contains(c) {
                hyps.push(c.clone());
            }
        }
        HypothesisSet { hyps, ref_index: 0 }
    }

    pub fn hyps(&self) -> &[TokenSequence] {
        &self.hyps
    }

    pub fn ref_index(&self) -> usize {
        self.ref_index
    }

    pub fn reference(&self) -> &TokenSequence {
        &self.hyps[self.ref_index]
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }
}

/// Interpolation weight, clamped to `[0, 1]`. 1 is local, 0 is global.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct InterpolationWeight(f64);

impl InterpolationWeight {
    pub const LOCAL: InterpolationWeight = InterpolationWeight(1.0);
    pub const GLOBAL: InterpolationWeight = InterpolationWeight(0.0);

    pub fn new(alpha: f64) -> Self {
        assert!(!alpha.is_nan(), "interpolation weight is NaN");
        InterpolationWeight(alpha.clamp(0.0, 1.0))
    }

    /// Like [`InterpolationWeight::new`] but rejects out-of-range input.
    pub fn checked(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(InterpolationWeight(alpha))
        } else {
            Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A loss value and its gradient w.r.t. each raw grid.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<WeightGrid>,
}

fn check_aligned(grids: &[WeightGrid], h: &HypothesisSet) -> Result<()> {
    if grids.len() != h.len() {
        return Err(Error::LengthMismatch {
            what: "grids vs hypotheses",
            expected: h.len(),
            actual: grids.len(),
        });
    }
    for (g, z) in grids.iter().zip(h.hyps()) {
        g.check_sequence(z)?;
    }
    Ok(())
}

/// `-log p_local(z)`: forward score of the softmax-normalized grid.
pub fn local_nll(g: &WeightGrid, z: &TokenSequence) -> Result<(f64, WeightGrid)> {
    let normalized = apply_partial_normalization(g, 1.0);
    let (score, occ) = forward_backward(&normalized, z)?;
    let mut grad = partial_normalization_vjp(g, 1.0, &occ);
    grad.scale_in_place(-1.0);
    Ok((-score.value(), grad))
}

struct Scored {
    scores: Vec<f64>,
    occs: Vec<WeightGrid>,
}

fn score_all(grids: &[WeightGrid], h: &HypothesisSet) -> Result<Scored> {
    let mut scores = Vec::with_capacity(grids.len());
    let mut occs = Vec::with_capacity(grids.len());
    for (g, z) in grids.iter().zip(h.hyps()) {
        let (s, occ) = forward_backward(g, z)?;
        scores.push(s.value());
        occs.push(occ);
    }
    Ok(Scored { scores, occs })
}

/// `-(S(ref) - logsumexp_H S(z))` over raw weights.
pub fn global_nbest_loss(grids: &[WeightGrid], h: &HypothesisSet) -> Result<LossOutput> {
    check_aligned(grids, h)?;
    let Scored { scores, occs } = score_all(grids, h)?;
    let r = h.ref_index();
    let loss = lse(&scores) - scores[r];
    let post = softmax(&scores);
    let mut grads = Vec::with_capacity(grids.len());
    for (i, occ) in occs.iter().enumerate() {
        let mut g = occ.clone();
        g.scale_in_place(post[i]);
        if i == r {
            g.add_scaled(occ, -1.0);
        }
        grads.push(g);
    }
    Ok(LossOutput { loss, grads })
}

/// `(1-alpha) logsumexp_H S(z) - S_alpha(ref)`, where `S_alpha` scores the
/// partially normalized reference grid. The reference takes two
/// forward-backward passes: raw (inside the log-sum) and partially normalized.
pub fn interpolated_loss(
    grids: &[WeightGrid],
    h: &HypothesisSet,
    alpha: f64,
) -> Result<LossOutput> {
    let a = InterpolationWeight::checked(alpha)?.value();
    check_aligned(grids, h)?;
    let r = h.ref_index();
    let ref_grid = &grids[r];
    let normalized = apply_partial_normalization(ref_grid, a);
    let (s_alpha, occ_alpha) = forward_backward(&normalized, h.reference())?;
    let mut ref_grad = partial_normalization_vjp(ref_grid, a, &occ_alpha);
    ref_grad.scale_in_place(-1.0);

    let weight = 1.0 - a;
    if weight == 0.0 {
        let mut grads: Vec<WeightGrid> = grids.iter().map(WeightGrid::zeros_like).collect();
        grads[r] = ref_grad;
        return Ok(LossOutput {
            loss: -s_alpha.value(),
            grads,
        });
    }

    let Scored { scores, occs } = score_all(grids, h)?;
    let post = softmax(&scores);
    let loss = weight * lse(&scores) - s_alpha.value();
    let mut grads = Vec::with_capacity(grids.len());
    for (i, occ) in occs.into_iter().enumerate() {
        let mut g = occ;
        g.scale_in_place(weight * post[i]);
        if i == r {
            g.add_scaled(&ref_grad, 1.0);
        }
        grads.push(g);
    }
    Ok(LossOutput { loss, grads })
}

/// Sum over rows of `logsumexp(row)^2` and the row count. The gradient of
/// the sum is accumulated into `grads` (same shapes as `grids`).
pub fn regularizer_sum(grids: &[WeightGrid], grads: &mut [WeightGrid]) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (g, d) in grids.iter().zip(grads.iter_mut()) {
        for (row, drow) in g.rows().zip(d.rows_mut()) {
            let l = lse(row);
            total += l * l;
            count += 1;
            for (dv, p) in drow.iter_mut().zip(softmax(row)) {
                *dv += 2.0 * l * p;
            }
        }
    }
    (total, count)
}

/// Mean over rows of `logsumexp(row)^2`, with per-row gradients.
/// An empty row set is 0.
pub fn normalization_regularizer(rows: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    if rows.is_empty() {
        return (0.0, Vec::new());
    }
    let n = rows.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(rows.len());
    for row in rows {
        let l = lse(row);
        value += l * l;
        grads.push(softmax(row).into_iter().map(|p| 2.0 * l * p / n).collect());
    }
    (value / n, grads)
}

/// Mean squared log-sum over every row of every grid (no gradient).
pub fn normalization_metric(grids: &[&WeightGrid]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for g in grids {
        for row in g.rows() {
            let l = lse(row);
            total += l * l;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub loss: f64,
    pub task: f64,
    pub regularizer: f64,
    pub grads: Vec<WeightGrid>,
}

/// Interpolated loss plus `lambda` times the regularizer averaged over every
/// row of every hypothesis grid.
pub fn total_objective(
    grids: &[WeightGrid],
    h: &HypothesisSet,
    alpha: f64,
    lambda: f64,
) -> Result<ObjectiveOutput> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    let LossOutput { loss: task, mut grads } = interpolated_loss(grids, h, alpha)?;
    let mut reg_grads: Vec<WeightGrid> = grids.iter().map(WeightGrid::zeros_like).collect();
    let (sum, count) = regularizer_sum(grids, &mut reg_grads);
    let regularizer = if count == 0 { 0.0 } else { sum / count as f64 };
    if lambda != 0.0 && count > 0 {
        let s = lambda / count as f64;
        for (g, r) in grads.iter_mut().zip(&reg_grads) {
            g.add_scaled(r, s);
        }
    }
    Ok(ObjectiveOutput {
        loss: task + lambda * regularizer,
        task,
        regularizer,
        grads,
    })
}

/// A per-utterance training criterion over hypothesis grids.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the criterion reads competitor grids at all.
    fn uses_competitors(&self, alpha: f64) -> bool;

    fn evaluate(&self, grids: &[WeightGrid], h: &HypothesisSet, alpha: f64) -> Result<LossOutput>;
}

pub struct LocalObjective;

impl Objective for LocalObjective {
    fn name(&self) -> &'static str {
        "local"
    }

    fn uses_competitors(&self, _alpha: f64) -> bool {
        false
    }

    fn evaluate(&self, grids: &[WeightGrid], h: &HypothesisSet, _alpha: f64) -> Result<LossOutput> {
        check_aligned(grids, h)?;
        let r = h.ref_index();
        let (loss, grad) = local_nll(&grids[r], h.reference())?;
        let mut grads: Vec<WeightGrid> = grids.iter().map(WeightGrid::zeros_like).collect();
        grads[r] = grad;
        Ok(LossOutput { loss, grads })
    }
}

pub struct GlobalObjective;

impl Objective for GlobalObjective {
    fn name(&self) -> &'static str {
        "global"
    }

    fn uses_competitors(&self, _alpha: f64) -> bool {
        true
    }

    fn evaluate(&self, grids: &[WeightGrid], h: &HypothesisSet, _alpha: f64) -> Result<LossOutput> {
        global_nbest_loss(grids, h)
    }
}

pub struct InterpolatedObjective;

impl Objective for InterpolatedObjective {
    fn name(&self) -> &'static str {
        "interpolated"
    }

    fn uses_competitors(&self, alpha: f64) -> bool {
        alpha < 1.0
    }

    fn evaluate(&self, grids: &[WeightGrid], h: &HypothesisSet, alpha: f64) -> Result<LossOutput> {
        interpolated_loss(grids, h, alpha)
    }
}

pub fn objective_registry() -> &'static Registry<dyn Objective> {
    static REG: OnceLock<Registry<dyn Objective>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn Objective> = Registry::new("objective");
        reg.register("interpolated", |_| Ok(Box::new(InterpolatedObjective)));
        reg.register("local", |_| Ok(Box::new(LocalObjective)));
        reg.register("global", |_| Ok(Box::new(GlobalObjective)));
        reg
    })
}

pub fn build_objective(spec: &str) -> Result<Box<dyn Objective>> {
    objective_registry().build(&StrategySpec::parse(spec))
}
