//! Partial local normalization: every row is divided (in log space,
//! subtracted) by its log-sum scaled by `alpha`.
//!
//! `alpha = 1` is a softmax, `alpha = 0` leaves the weights untouched.

use crate::lattice::grid::WeightGrid;
use crate::logspace::{lse, softmax};

pub fn apply_partial_normalization(g: &WeightGrid, alpha: f64) -> WeightGrid {
    let mut out = g.clone();
    if alpha == 0.0 {
        return out;
    }
    for row in out.rows_mut() {
        normalize_row(row, alpha);
    }
    out
}

/// One row of [`apply_partial_normalization`], in place. Search uses this so
/// its rows are bit-identical to the grid's.
#[inline]
pub fn normalize_row(row: &mut [f64], alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    let z = alpha * lse(row);
    row.iter_mut().for_each(|v| *v -= z);
}

/// Vector-Jacobian product: pulls a gradient w.r.t. the normalized grid back
/// to the raw grid.
///
/// `d W[y] = d W'[y] - alpha * softmax(row)[y] * sum_y' d W'[y']`.
pub fn partial_normalization_vjp(raw: &WeightGrid, alpha: f64, d_out: &WeightGrid) -> WeightGrid {
    let mut d_in = d_out.clone();
    if alpha == 0.0 {
        return d_in;
    }
    for (row, d) in raw.rows().zip(d_in.rows_mut()) {
        let total: f64 = d.iter().sum();
        if total == 0.0 {
            continue;
        }
        let p = softmax(row);
        for (dv, pv) in d.iter_mut().zip(p) {
            *dv -= alpha * pv * total;
        }
    }
    d_in
}
