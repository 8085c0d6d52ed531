//! Word error rate by unit-cost Levenshtein alignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    /// Percentage.
    pub rate: f64,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn from_counts(s: usize, d: usize, i: usize, ref_len: usize) -> Self {
        WerResult {
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_len,
            rate: 100.0 * (s + d + i) as f64 / ref_len as f64,
        }
    }

    /// Pools counts across utterances.
    pub fn combine(results: &[WerResult]) -> Result<WerResult> {
        let sum = |f: fn(&WerResult) -> usize| results.iter().map(f).sum::<usize>();
        let n = sum(|r| r.ref_len);
        if n == 0 {
            return Err(Error::EmptyInput("reference"));
        }
        Ok(Self::from_counts(
            sum(|r| r.substitutions),
            sum(|r| r.deletions),
            sum(|r| r.insertions),
            n,
        ))
    }
}

/// Minimal edit script from `reference` to `hypothesis`. Among equal-cost
/// scripts the backtrace prefers substitution, then insertion, then deletion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference"));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut del, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                s += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            ins += 1;
            j -= 1;
        } else {
            del += 1;
            i -= 1;
        }
    }
    Ok(WerResult::from_counts(s, del, ins, n))
}
