use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label index of blank in every logit row.
pub const BLANK: usize = 0;

/// How complete alignments may end.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Paths end at `(T, U)` and may emit tokens at `t = T` after the whole
    /// input has been seen.
    #[default]
    Free,
    /// Tokens are never emitted at `t = T`: the last move is always a blank.
    FinalBlank,
}

/// Which token edges exist in the lattice.
///
/// `windows[u] = (lo, hi)` restricts the `(u+1)`-th token to node times
/// `lo..=hi`; a sequence longer than `windows.len()` has no valid alignment.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub termination: Termination,
    pub windows: Option<Vec<(usize, usize)>>,
}

impl Topology {
    pub fn with_windows(windows: Vec<(usize, usize)>) -> Self {
        Topology {
            termination: Termination::Free,
            windows: Some(windows),
        }
    }

    /// Whether the `(u+1)`-th token may be emitted at node time `t` of a
    /// `frames`-frame input.
    #[inline]
    pub fn token_allowed(&self, t: usize, u: usize, frames: usize) -> bool {
        if self.termination == Termination::FinalBlank && t >= frames {
            return false;
        }
        match &self.windows {
            None => true,
            Some(w) => w.get(u).is_some_and(|&(lo, hi)| lo <= t && t <= hi),
        }
    }

    /// Upper bound on sequence length, when the topology imposes one.
    pub fn max_tokens(&self) -> Option<usize> {
        self.windows.as_ref().map(Vec::len)
    }
}

/// Per-node log-weights `W[t, u, y]` over a `(T+1) x (U+1)` lattice with
/// `K+1` labels, blank first.
///
/// Blank entries at `t = T` and token entries at `u = U` exist in storage but
/// no path uses them.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightGrid {
    frames: usize,
    tokens: usize,
    vocab: usize,
    logits: Vec<f64>,
    topology: Topology,
}

impl WeightGrid {
    pub fn zeros(frames: usize, tokens: usize, vocab: usize) -> Self {
        WeightGrid {
            frames,
            tokens,
            vocab,
            logits: vec![0.0; (frames + 1) * (tokens + 1) * (vocab + 1)],
            topology: Topology::default(),
        }
    }

    pub fn from_vec(frames: usize, tokens: usize, vocab: usize, logits: Vec<f64>) -> Result<Self> {
        let expected = (frames + 1) * (tokens + 1) * (vocab + 1);
        if logits.len() != expected {
            return Err(Error::LengthMismatch {
                what: "grid logits",
                expected,
                actual: logits.len(),
            });
        }
        Ok(WeightGrid {
            frames,
            tokens,
            vocab,
            logits,
            topology: Topology::default(),
        })
    }

    /// A zero grid with the same shape and topology.
    pub fn zeros_like(&self) -> Self {
        WeightGrid {
            logits: vec![0.0; self.logits.len()],
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> Self {
        WeightGrid {
            frames: self.frames,
            tokens: self.tokens,
            vocab: self.vocab,
            logits: Vec::new(),
            topology: self.topology.clone(),
        }
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn set_topology(&mut self, topology: Topology) {
        self.topology = topology;
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// T
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// U
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// K, excluding blank.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row_len(&self) -> usize {
        self.vocab + 1
    }

    pub fn num_rows(&self) -> usize {
        (self.frames + 1) * (self.tokens + 1)
    }

    #[inline]
    fn offset(&self, t: usize, u: usize) -> usize {
        debug_assert!(t <= self.frames && u <= self.tokens);
        (t * (self.tokens + 1) + u) * (self.vocab + 1)
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, y: usize) -> f64 {
        self.logits[self.offset(t, u) + y]
    }

    #[inline]
    pub fn set(&mut self, t: usize, u: usize, y: usize, value: f64) {
        let o = self.offset(t, u);
        self.logits[o + y] = value;
    }

    #[inline]
    pub fn add(&mut self, t: usize, u: usize, y: usize, value: f64) {
        let o = self.offset(t, u);
        self.logits[o + y] += value;
    }

    pub fn row(&self, t: usize, u: usize) -> &[f64] {
        let o = self.offset(t, u);
        &self.logits[o..o + self.vocab + 1]
    }

    pub fn row_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        let o = self.offset(t, u);
        let k = self.vocab + 1;
        &mut self.logits[o..o + k]
    }

    /// Rows in `(t, u)` order.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.logits.chunks(self.vocab + 1)
    }

    pub fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let k = self.vocab + 1;
        self.logits.chunks_mut(k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    #[inline]
    pub fn token_allowed(&self, t: usize, u: usize) -> bool {
        u < self.tokens && self.topology.token_allowed(t, u, self.frames)
    }

    /// Adds `c` to every logit, used or not.
    pub fn shift(&mut self, c: f64) {
        self.logits.iter_mut().for_each(|v| *v += c);
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.logits.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_scaled(&mut self, other: &WeightGrid, s: f64) {
        assert_eq!(self.logits.len(), other.logits.len(), "grid shapes differ");
        for (a, b) in self.logits.iter_mut().zip(&other.logits) {
            *a += s * b;
        }
    }

    pub fn check_sequence(&self, z: &TokenSequence) -> Result<()> {
        if z.len() != self.tokens {
            return Err(Error::LengthMismatch {
                what: "token sequence vs grid U",
                expected: self.tokens,
                actual: z.len(),
            });
        }
        if let Some(&bad) = z.iter().find(|&&k| k > self.vocab) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: self.vocab,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for WeightGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightGrid")
            .field("T", &self.frames)
            .field("U", &self.tokens)
            .field("K", &self.vocab)
            .field("topology", &self.topology)
            .finish()
    }
}

/// Output tokens with blanks removed. Indices are `1..=K`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.contains(&BLANK) {
            return Err(Error::TokenOutOfRange { token: 0, vocab: 0 });
        }
        Ok(TokenSequence(tokens))
    }

    pub fn with_vocab(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&k| k == BLANK || k > vocab) {
            return Err(Error::TokenOutOfRange { token: bad, vocab });
        }
        Ok(TokenSequence(tokens))
    }

    pub fn empty() -> Self {
        TokenSequence(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// Space-joined token ids, the hypotheses-file form.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_text(s: &str) -> Result<Self> {
        let tokens = s
            .split_whitespace()
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad token id '{w}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(tokens)
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// An alignment: tokens interleaved with blanks (`0`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn tokens(&self) -> TokenSequence {
        TokenSequence(self.0.iter().copied().filter(|&y| y != BLANK).collect())
    }

    pub fn blanks(&self) -> usize {
        self.0.iter().filter(|&&y| y == BLANK).count()
    }

    /// Renders with `_` for blank and `symbols[k-1]` for token `k`.
    pub fn render(&self, symbols: &[&str]) -> String {
        self.0
            .iter()
            .map(|&y| if y == BLANK { "_" } else { symbols[y - 1] })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Blank,
    Token,
}

/// One lattice transition, tagged with the node it leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub kind: MoveKind,
    pub t: usize,
    pub u: usize,
}

/// A monotone staircase from `(0, 0)` to `(T, U)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub moves: Vec<Move>,
}

impl Path {
    pub fn blanks(&self) -> usize {
        self.moves.iter().filter(|m| m.kind == MoveKind::Blank).count()
    }

    pub fn token_moves(&self) -> usize {
        self.moves.len() - self.blanks()
    }

    /// Builds a path from a blank/token pattern (`true` = token).
    pub fn from_pattern(pattern: &[bool]) -> Self {
        let (mut t, mut u) = (0, 0);
        let moves = pattern
            .iter()
            .map(|&is_token| {
                let m = Move {
                    kind: if is_token { MoveKind::Token } else { MoveKind::Blank },
                    t,
                    u,
                };
                if is_token {
                    u += 1;
                } else {
                    t += 1;
                }
                m
            })
            .collect();
        Path { moves }
    }

    pub fn allowed_in(&self, g: &WeightGrid) -> bool {
        self.moves
            .iter()
            .all(|m| m.kind == MoveKind::Blank || g.token_allowed(m.t, m.u))
    }

    /// Sum of the path's edge log-weights for the given tokens.
    pub fn log_weight(&self, g: &WeightGrid, z: &TokenSequence) -> f64 {
        self.moves
            .iter()
            .map(|m| match m.kind {
                MoveKind::Blank => g.get(m.t, m.u, BLANK),
                MoveKind::Token => g.get(m.t, m.u, z[m.u]),
            })
            .sum()
    }
}
