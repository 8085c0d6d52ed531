use std::collections::{BTreeSet, HashMap};

use gnt_core::wer::wer;
use proptest::prelude::*;

type Counts = (usize, usize, usize);

/// Every (substitutions, deletions, insertions) triple reachable by an edit
/// script, explored recursively.
fn scripts(r: &[u8], h: &[u8], memo: &mut HashMap<(usize, usize), BTreeSet<Counts>>) -> BTreeSet<Counts> {
    let key = (r.len(), h.len());
    if let Some(v) = memo.get(&key) {
        return v.clone();
    }
    let mut out = BTreeSet::new();
    if r.is_empty() && h.is_empty() {
        out.insert((0, 0, 0));
    }
    if !r.is_empty() && !h.is_empty() {
        let s = usize::from(r[0] != h[0]);
        for (a, b, c) in scripts(&r[1..], &h[1..], memo) {
            out.insert((a + s, b, c));
        }
    }
    if !r.is_empty() {
        for (a, b, c) in scripts(&r[1..], h, memo) {
            out.insert((a, b + 1, c));
        }
    }
    if !h.is_empty() {
        for (a, b, c) in scripts(r, &h[1..], memo) {
            out.insert((a, b, c + 1));
        }
    }
    memo.insert(key, out.clone());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_exhaustive_edit_scripts(r in prop::collection::vec(0u8..3, 1..7), h in prop::collection::vec(0u8..3, 0..7)) {
        let got = wer(&r, &h).unwrap();
        let all = scripts(&r, &h, &mut HashMap::new());
        let best = all.iter().map(|(a, b, c)| a + b + c).min().unwrap();
        prop_assert_eq!(got.errors(), best);
        prop_assert!(all.contains(&(got.substitutions, got.deletions, got.insertions)));
        prop_assert_eq!(got.ref_len, r.len());
        prop_assert!((got.rate - 100.0 * best as f64 / r.len() as f64).abs() < 1e-12);
        // Length difference fixes deletions minus insertions.
        prop_assert_eq!(got.deletions as i64 - got.insertions as i64, r.len() as i64 - h.len() as i64);
    }
}
