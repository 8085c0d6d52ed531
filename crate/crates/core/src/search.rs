//! Time-synchronous streaming beam search over unnormalized weights.
//!
//! At each frame every hypothesis may emit up to `E` tokens before the blank
//! moves it to the next frame. Contributions with different emission counts
//! are expanded separately and merged by token sequence with logsumexp, so a
//! hypothesis score is the summed weight of the alignments the search kept.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{normalize_row, TokenSequence, Topology, WeightGrid, BLANK};
use crate::logspace::log_add;
use crate::losses::HypothesisSet;
use crate::model::{frame_for_node, Matrix, PredictorState, Transducer};

pub const DEFAULT_BEAM: usize = 50;
pub const DEFAULT_NBEST: usize = 10;
pub const DEFAULT_MAX_EMISSIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SearchConfig {
    pub beam: usize,
    pub nbest: usize,
    /// Token emissions allowed per frame.
    pub max_emissions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beam: DEFAULT_BEAM,
            nbest: DEFAULT_NBEST,
            max_emissions: DEFAULT_MAX_EMISSIONS,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nbest == 0 || self.beam < self.nbest || self.max_emissions == 0 {
            return Err(Error::InvalidArgument(format!(
                "search needs beam >= nbest >= 1 and max_emissions >= 1 (got {}, {}, {})",
                self.beam, self.nbest, self.max_emissions
            )));
        }
        Ok(())
    }
}

/// Source of per-node log-weight rows for a growing prefix.
pub trait RowScorer {
    type State: Clone;

    fn frames(&self) -> usize;

    fn vocab(&self) -> usize;

    fn topology(&self) -> &Topology;

    fn start(&self) -> Self::State;

    fn advance(&self, state: &Self::State, token: usize) -> Self::State;

    /// The `K+1` weights at node time `t` after the prefix behind `state`.
    fn row(&self, t: usize, state: &Self::State) -> Vec<f64>;
}

/// Grid of `z` as seen by a scorer (same rows the search reads).
pub fn scorer_grid<S: RowScorer>(scorer: &S, z: &TokenSequence) -> WeightGrid {
    let frames = scorer.frames();
    let mut states = vec![scorer.start()];
    for &k in z.iter() {
        let next = scorer.advance(states.last().expect("non-empty"), k);
        states.push(next);
    }
    let mut g = WeightGrid::zeros(frames, z.len(), scorer.vocab());
    for t in 0..=frames {
        for (u, st) in states.iter().enumerate() {
            g.row_mut(t, u).copy_from_slice(&scorer.row(t, st));
        }
    }
    g.with_topology(scorer.topology().clone())
}

/// Model rows, partially normalized at `alpha`.
pub struct ModelScorer<'a> {
    model: &'a Transducer,
    enc_proj: Vec<Vec<f64>>,
    alpha: f64,
    topology: Topology,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Transducer, features: &Matrix, alpha: f64, topology: Topology) -> Result<Self> {
        let enc = model.encode(features)?;
        Ok(ModelScorer {
            model,
            enc_proj: model.project_encoder(&enc),
            alpha,
            topology,
        })
    }
}

impl RowScorer for ModelScorer<'_> {
    type State = (PredictorState, Vec<f64>);

    fn frames(&self) -> usize {
        self.enc_proj.len()
    }

    fn vocab(&self) -> usize {
        self.model.config().vocab
    }

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn start(&self) -> Self::State {
        let s = self.model.predictor_start();
        let p = self.model.project_predictor(&s);
        (s, p)
    }

    fn advance(&self, state: &Self::State, token: usize) -> Self::State {
        let s = self
            .model
            .predictor_step(&state.0, token)
            .expect("search only emits in-vocabulary tokens");
        let p = self.model.project_predictor(&s);
        (s, p)
    }

    fn row(&self, t: usize, state: &Self::State) -> Vec<f64> {
        let frame = frame_for_node(t, self.frames()).map(|f| self.enc_proj[f].as_slice());
        let (mut logits, _) = self.model.joiner_row(frame, &state.1);
        normalize_row(&mut logits, self.alpha);
        logits
    }
}

/// Rows from a function of `(t, prefix)`; used for synthetic lattices.
pub struct FnScorer<F> {
    frames: usize,
    vocab: usize,
    topology: Topology,
    f: F,
}

impl<F: Fn(usize, &[usize]) -> Vec<f64>> FnScorer<F> {
    pub fn new(frames: usize, vocab: usize, topology: Topology, f: F) -> Self {
        FnScorer {
            frames,
            vocab,
            topology,
            f,
        }
    }
}

impl<F: Fn(usize, &[usize]) -> Vec<f64>> RowScorer for FnScorer<F> {
    type State = Vec<usize>;

    fn frames(&self) -> usize {
        self.frames
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn start(&self) -> Vec<usize> {
        Vec::new()
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> Vec<usize> {
        let mut s = state.clone();
        s.push(token);
        s
    }

    fn row(&self, t: usize, state: &Vec<usize>) -> Vec<f64> {
        (self.f)(t, state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypothesis {
    pub tokens: TokenSequence,
    pub score: f64,
}

struct Entry<S> {
    score: f64,
    state: S,
}

type Frontier<S> = BTreeMap<Vec<usize>, Entry<S>>;

fn by_score(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Keys of the best `b` entries with finite score.
fn survivors(scores: impl Iterator<Item = (Vec<usize>, f64)>, b: usize) -> Vec<Vec<usize>> {
    let mut v: Vec<(Vec<usize>, f64)> = scores.filter(|(_, s)| *s > f64::NEG_INFINITY).collect();
    v.sort_by(by_score);
    v.truncate(b);
    v.into_iter().map(|(k, _)| k).collect()
}

fn prune<S>(mut f: Frontier<S>, b: usize) -> Frontier<S> {
    let keep = survivors(f.iter().map(|(k, e)| (k.clone(), e.score)), b);
    keep.into_iter()
        .map(|k| {
            let e = f.remove(&k).expect("present");
            (k, e)
        })
        .collect()
}

/// Best-first list of at most `cfg.nbest` distinct token sequences.
pub fn beam_search<S: RowScorer>(scorer: &S, cfg: &SearchConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let frames = scorer.frames();
    if frames == 0 {
        return Ok(vec![Hypothesis {
            tokens: TokenSequence::empty(),
            score: 0.0,
        }]);
    }
    let vocab = scorer.vocab();
    let topo = scorer.topology();
    let mut hyps: Frontier<S::State> = BTreeMap::new();
    hyps.insert(
        Vec::new(),
        Entry {
            score: 0.0,
            state: scorer.start(),
        },
    );

    for t in 0..=frames {
        let mut rows: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        let mut layer: BTreeMap<Vec<usize>, f64> = hyps.iter().map(|(k, e)| (k.clone(), e.score)).collect();
        let mut union = hyps;

        for _ in 0..cfg.max_emissions {
            let mut next: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for (prefix, &score) in &layer {
                if !topo.token_allowed(t, prefix.len(), frames) {
                    continue;
                }
                let row = rows
                    .entry(prefix.clone())
                    .or_insert_with(|| scorer.row(t, &union[prefix].state));
                for (k, &w) in row.iter().enumerate().skip(1) {
                    let mut p = prefix.clone();
                    p.push(k);
                    next.insert(p, score + w);
                }
            }
            let keep = survivors(next.iter().map(|(k, s)| (k.clone(), *s)), cfg.beam);
            if keep.is_empty() {
                break;
            }
            layer = BTreeMap::new();
            for p in keep {
                let s = next[&p];
                match union.get_mut(&p) {
                    Some(e) => e.score = log_add(e.score, s),
                    None => {
                        let parent = &union[&p[..p.len() - 1]];
                        let state = scorer.advance(&parent.state, p[p.len() - 1]);
                        union.insert(p.clone(), Entry { score: s, state });
                    }
                }
                layer.insert(p, s);
            }
            debug_assert!(layer.keys().all(|p| p.iter().all(|&k| k >= 1 && k <= vocab)));
        }

        if t == frames {
            let ranked = survivors(union.iter().map(|(k, e)| (k.clone(), e.score)), cfg.nbest);
            return ranked
                .into_iter()
                .map(|k| {
                    let score = union[&k].score;
                    Ok(Hypothesis {
                        tokens: TokenSequence::new(k)?,
                        score,
                    })
                })
                .collect();
        }
        for (prefix, e) in union.iter_mut() {
            let blank = match rows.get(prefix) {
                Some(r) => r[BLANK],
                None => scorer.row(t, &e.state)[BLANK],
            };
            e.score += blank;
        }
        hyps = prune(union, cfg.beam);
    }
    unreachable!("loop returns at t == frames")
}

/// N-best competitors plus the reference. If the reference was not found,
/// it replaces the last competitor (or is appended when fewer than N).
pub fn training_hypotheses(nbest: &[Hypothesis], reference: &TokenSequence, n: usize) -> HypothesisSet {
    let mut hyps: Vec<TokenSequence> = Vec::with_capacity(n.max(1));
    for h in nbest {
        if !hyps.contains(&h.tokens) && hyps.len() < n {
            hyps.push(h.tokens.clone());
        }
    }
    let ref_index = match hyps.iter().position(|z| z == reference) {
        Some(i) => i,
        None => {
            if hyps.len() >= n.max(1) {
                hyps.pop();
            }
            hyps.push(reference.clone());
            hyps.len() - 1
        }
    };
    HypothesisSet::new(hyps, ref_index).expect("distinct by construction")
}

/// Beam search at the model's current interpolation weight, then reference
/// injection.
pub fn build_training_hypotheses(
    model: &Transducer,
    features: &Matrix,
    reference: &TokenSequence,
    alpha: f64,
    topology: &Topology,
    cfg: &SearchConfig,
) -> Result<HypothesisSet> {
    let scorer = ModelScorer::new(model, features, alpha, topology.clone())?;
    let nbest = beam_search(&scorer, cfg)?;
    Ok(training_hypotheses(&nbest, reference, cfg.nbest))
}

/// Top-1 of a beam search with `nbest = 1`.
pub fn decode<S: RowScorer>(scorer: &S, beam: usize, max_emissions: usize) -> Result<Hypothesis> {
    let cfg = SearchConfig {
        beam,
        nbest: 1,
        max_emissions,
    };
    let mut best = beam_search(scorer, &cfg)?;
    best.pop().ok_or(Error::EmptyInput("no surviving hypothesis"))
}

/// Every token sequence over `1..=vocab` with length `<= max_len`, shortest
/// first then lexicographic.
pub fn all_sequences(vocab: usize, max_len: usize) -> Vec<TokenSequence> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * vocab);
        for p in &frontier {
            for k in 1..=vocab {
                let mut q: Vec<usize> = p.clone();
                q.push(k);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.into_iter()
        .map(|v| TokenSequence::new(v).expect("non-blank"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::forward_score;
    use crate::logspace::lse;

    fn hashed_row(seed: u64, t: usize, prefix: &[usize], vocab: usize, normalize: bool) -> Vec<f64> {
        let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
        for &x in std::iter::once(&t).chain(prefix) {
            h = (h ^ x as u64).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
        }
        let mut row: Vec<f64> = (0..=vocab)
            .map(|k| {
                let v = (h ^ (k as u64).wrapping_mul(0xff51_afd7_ed55_8ccd)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
                ((v >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
            })
            .collect();
        if normalize {
            let z = lse(&row);
            row.iter_mut().for_each(|v| *v -= z);
        }
        row
    }

    #[test]
    fn blank_heavy_single_frame_returns_empty() {
        let s = FnScorer::new(1, 1, Topology::default(), |_, _| vec![0.0, -50.0]);
        let out = beam_search(&s, &SearchConfig::default()).unwrap();
        assert!(out[0].tokens.is_empty());
    }

    #[test]
    fn empty_input() {
        let s = FnScorer::new(0, 2, Topology::default(), |_, _| vec![0.0, 0.0, 0.0]);
        let out = beam_search(&s, &SearchConfig::default()).unwrap();
        assert_eq!(out, vec![Hypothesis { tokens: TokenSequence::empty(), score: 0.0 }]);
    }

    #[test]
    fn exhaustive_scores_equal_forward() {
        let (frames, vocab) = (3, 2);
        let s = FnScorer::new(frames, vocab, Topology::default(), |t, p| hashed_row(4, t, p, vocab, true));
        let cfg = SearchConfig {
            beam: 100_000,
            nbest: 100_000,
            max_emissions: 3,
        };
        let out = beam_search(&s, &cfg).unwrap();
        assert_eq!(out.len(), all_sequences(vocab, 3 * (frames + 1)).len());
        for h in out.iter().filter(|h| h.tokens.len() <= 3) {
            let f = forward_score(&scorer_grid(&s, &h.tokens), &h.tokens).unwrap().value();
            assert!((h.score - f).abs() <= 1e-12 * f.abs().max(1.0), "{:?} {f}", h);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let s = FnScorer::new(1, 1, Topology::default(), |_, _| vec![0.0, 0.0]);
        let cfg = SearchConfig { beam: 1, nbest: 2, max_emissions: 1 };
        assert!(beam_search(&s, &cfg).is_err());
    }

    #[test]
    fn reference_injection() {
        let h = |v: Vec<usize>, s| Hypothesis { tokens: TokenSequence::new(v).unwrap(), score: s };
        let nbest = vec![h(vec![1], -1.0), h(vec![2], -2.0), h(vec![1, 1], -3.0)];
        let present = training_hypotheses(&nbest, &TokenSequence::new(vec![2]).unwrap(), 3);
        assert_eq!(present.len(), 3);
        assert_eq!(present.ref_index(), 1);
        let absent = training_hypotheses(&nbest, &TokenSequence::new(vec![2, 2]).unwrap(), 3);
        assert_eq!(absent.len(), 3);
        assert_eq!(absent.reference().as_slice(), &[2, 2]);
        assert!(!absent.hyps().contains(&TokenSequence::new(vec![1, 1]).unwrap()));
    }

    #[test]
    fn sequences_enumeration() {
        assert_eq!(all_sequences(2, 3).len(), 1 + 2 + 4 + 8);
        assert_eq!(all_sequences(3, 0), vec![TokenSequence::empty()]);
    }

    #[test]
    fn windows_restrict_search() {
        let topo = Topology::with_windows(vec![(0, 0)]);
        let s = FnScorer::new(2, 1, topo, |_, _| vec![-1.0, 0.0]);
        let out = beam_search(&s, &SearchConfig::default()).unwrap();
        assert!(out.iter().all(|h| h.tokens.len() <= 1));
        assert_eq!(out.len(), 2);
    }
}
