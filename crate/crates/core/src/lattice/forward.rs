//! Forward and forward-backward recursions over a single token sequence.
//!
//! Nothing here assumes rows are normalized: the same code scores locally
//! normalized, partially normalized and raw weights.

use crate::error::Result;
use crate::lattice::grid::{TokenSequence, WeightGrid, BLANK};
use crate::logspace::{log_add, LogWeight};

/// Forward variables `alpha[t][u]`, flattened `t * (U+1) + u`.
pub fn forward_table(g: &WeightGrid, z: &TokenSequence) -> Vec<f64> {
    let (tt, uu) = (g.frames(), g.tokens());
    let w = uu + 1;
    let mut alpha = vec![f64::NEG_INFINITY; (tt + 1) * w];
    alpha[0] = 0.0;
    for t in 0..=tt {
        for u in 0..=uu {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 0 {
                acc = alpha[(t - 1) * w + u] + g.get(t - 1, u, BLANK);
            }
            if u > 0 && g.token_allowed(t, u - 1) {
                acc = log_add(acc, alpha[t * w + u - 1] + g.get(t, u - 1, z[u - 1]));
            }
            alpha[t * w + u] = acc;
        }
    }
    alpha
}

/// Backward variables `beta[t][u]`: log-weight of all completions from
/// `(t, u)` to `(T, U)`.
pub fn backward_table(g: &WeightGrid, z: &TokenSequence) -> Vec<f64> {
    let (tt, uu) = (g.frames(), g.tokens());
    let w = uu + 1;
    let mut beta = vec![f64::NEG_INFINITY; (tt + 1) * w];
    beta[tt * w + uu] = 0.0;
    for t in (0..=tt).rev() {
        for u in (0..=uu).rev() {
            if t == tt && u == uu {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t < tt {
                acc = beta[(t + 1) * w + u] + g.get(t, u, BLANK);
            }
            if u < uu && g.token_allowed(t, u) {
                acc = log_add(acc, beta[t * w + u + 1] + g.get(t, u, z[u]));
            }
            beta[t * w + u] = acc;
        }
    }
    beta
}

/// Log of the summed weight of all alignments of `z`.
pub fn forward_score(g: &WeightGrid, z: &TokenSequence) -> Result<LogWeight> {
    g.check_sequence(z)?;
    let alpha = forward_table(g, z);
    LogWeight::checked(alpha[alpha.len() - 1])
}

/// Score plus `d score / d W[t,u,y]` for every entry (edge occupancies).
///
/// Unused entries get zero. When `z` has no valid alignment the score is
/// `-inf` and the gradient is identically zero.
pub fn forward_backward(g: &WeightGrid, z: &TokenSequence) -> Result<(LogWeight, WeightGrid)> {
    g.check_sequence(z)?;
    let alpha = forward_table(g, z);
    let beta = backward_table(g, z);
    let (tt, uu) = (g.frames(), g.tokens());
    let w = uu + 1;
    let total = LogWeight::checked(alpha[tt * w + uu])?.value();
    let mut grad = g.zeros_like();
    if total == f64::NEG_INFINITY {
        return Ok((LogWeight::ZERO, grad));
    }
    for t in 0..=tt {
        for u in 0..=uu {
            let a = alpha[t * w + u];
            if a == f64::NEG_INFINITY {
                continue;
            }
            if t < tt {
                let occ = (a + g.get(t, u, BLANK) + beta[(t + 1) * w + u] - total).exp();
                grad.set(t, u, BLANK, occ);
            }
            if u < uu && g.token_allowed(t, u) {
                let y = z[u];
                let occ = (a + g.get(t, u, y) + beta[t * w + u + 1] - total).exp();
                grad.set(t, u, y, occ);
            }
        }
    }
    Ok((LogWeight::new(total), grad))
}

pub fn occupancy_gradients(g: &WeightGrid, z: &TokenSequence) -> Result<WeightGrid> {
    forward_backward(g, z).map(|(_, grad)| grad)
}
