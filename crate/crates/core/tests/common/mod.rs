#![allow(dead_code)]

use gnt_core::logspace::lse;

/// Deterministic pseudo-random row for node time `t` after `prefix`, so that
/// grids built for different sequences come from one consistent model.
pub fn hashed_row(seed: u64, t: usize, prefix: &[usize], vocab: usize, scale: f64, normalize: bool) -> Vec<f64> {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &x in std::iter::once(&t).chain(prefix) {
        h = (h ^ x as u64).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
    }
    let mut row: Vec<f64> = (0..=vocab)
        .map(|k| {
            let v = (h ^ (k as u64).wrapping_mul(0xff51_afd7_ed55_8ccd)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
            ((v >> 11) as f64 / (1u64 << 53) as f64) * 2.0 * scale - scale
        })
        .collect();
    if normalize {
        let z = lse(&row);
        row.iter_mut().for_each(|v| *v -= z);
    }
    row
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
