//! Expected token emission times via the expectation semiring.
//!
//! An element pairs a log mass `w` with the mass-weighted value `m`. Rather
//! than `m` itself we store `e = m / exp(w)`, the conditional expectation,
//! which stays in the range of the times being averaged and cannot underflow
//! on long utterances. Running the ordinary forward recursion over these
//! elements yields the posterior-expected total emission time of the
//! reference tokens.

use std::sync::OnceLock;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lattice::{
    apply_partial_normalization, enumerate_paths, MoveKind, TokenSequence, WeightGrid, BLANK,
};
use crate::logspace::{log_add, lse, LogWeight, SignedLog};
use crate::model::Transducer;
use crate::registry::{Registry, StrategySpec};

pub const DEFAULT_FRAME_MS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectationWeight {
    /// Log mass.
    pub w: f64,
    /// `m / exp(w)`; 0 when the mass is zero.
    pub e: f64,
}

impl ExpectationWeight {
    pub const ZERO: ExpectationWeight = ExpectationWeight {
        w: f64::NEG_INFINITY,
        e: 0.0,
    };
    pub const ONE: ExpectationWeight = ExpectationWeight { w: 0.0, e: 0.0 };

    /// An edge of log weight `w` carrying value `x` (here, a time).
    pub fn edge(w: f64, x: f64) -> Self {
        if w == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        ExpectationWeight { w, e: x }
    }

    /// `(w, m)` with `m` given as a signed log magnitude.
    pub fn from_mass(w: f64, m: SignedLog) -> Self {
        if w == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        ExpectationWeight {
            w,
            e: m.scale(-w).to_f64(),
        }
    }

    /// The mass-weighted value `m = e * exp(w)`.
    pub fn m(self) -> SignedLog {
        SignedLog::from_f64(self.e).scale(self.w)
    }

    pub fn plus(self, o: Self) -> Self {
        if o.w == f64::NEG_INFINITY {
            return self;
        }
        if self.w == f64::NEG_INFINITY {
            return o;
        }
        let w = log_add(self.w, o.w);
        let e = (self.w - w).exp() * self.e + (o.w - w).exp() * o.e;
        ExpectationWeight { w, e }
    }

    pub fn times(self, o: Self) -> Self {
        let w = self.w + o.w;
        if w == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        ExpectationWeight { w, e: self.e + o.e }
    }

    /// The expected value; `None` at zero mass.
    pub fn expectation(self) -> Option<f64> {
        (self.w != f64::NEG_INFINITY).then_some(self.e)
    }
}

/// Forward pass in the expectation semiring. A token edge at node `(t, u)`
/// carries time `t * frame_ms`, blanks carry 0. `None` when `z` is empty.
pub fn expectation_forward(
    g: &WeightGrid,
    z: &TokenSequence,
    frame_ms: f64,
) -> Result<Option<ExpectationWeight>> {
    g.check_sequence(z)?;
    if z.is_empty() {
        return Ok(None);
    }
    let (tt, uu) = (g.frames(), g.tokens());
    let width = uu + 1;
    let mut a = vec![ExpectationWeight::ZERO; (tt + 1) * width];
    a[0] = ExpectationWeight::ONE;
    for t in 0..=tt {
        for u in 0..=uu {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = ExpectationWeight::ZERO;
            if t > 0 {
                let e = ExpectationWeight::edge(g.get(t - 1, u, BLANK), 0.0);
                acc = acc.plus(a[(t - 1) * width + u].times(e));
            }
            if u > 0 && g.token_allowed(t, u - 1) {
                let e = ExpectationWeight::edge(g.get(t, u - 1, z[u - 1]), t as f64 * frame_ms);
                acc = acc.plus(a[t * width + u - 1].times(e));
            }
            a[t * width + u] = acc;
        }
    }
    Ok(Some(a[tt * width + uu]))
}

/// Oracle: posterior-weighted total emission time by path enumeration.
pub fn brute_force_expected_time(g: &WeightGrid, z: &TokenSequence, frame_ms: f64) -> Result<Option<f64>> {
    g.check_sequence(z)?;
    if z.is_empty() {
        return Ok(None);
    }
    let mut weights = Vec::new();
    let mut times = Vec::new();
    for p in enumerate_paths(g.frames(), g.tokens())? {
        if !p.allowed_in(g) {
            continue;
        }
        weights.push(p.log_weight(g, z));
        let total: f64 = p
            .moves
            .iter()
            .filter(|m| m.kind == MoveKind::Token)
            .map(|m| m.t as f64 * frame_ms)
            .sum();
        times.push(total);
    }
    let z_total = lse(&weights);
    if z_total == f64::NEG_INFINITY {
        return Ok(None);
    }
    Ok(Some(
        weights
            .iter()
            .zip(&times)
            .map(|(w, t)| (w - z_total).exp() * t)
            .sum(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceLatency {
    pub id: String,
    pub tokens: usize,
    /// Expected summed emission time of all tokens.
    pub total_ms: f64,
    pub mean_ms: f64,
}

/// How per-utterance expectations become one number.
pub trait LatencyAveraging: Send + Sync {
    fn name(&self) -> &'static str;
    fn aggregate(&self, utts: &[UtteranceLatency]) -> f64;
}

/// Mean over utterances of the per-token mean.
pub struct PerUtterance;

impl LatencyAveraging for PerUtterance {
    fn name(&self) -> &'static str {
        "per-utterance"
    }

    fn aggregate(&self, utts: &[UtteranceLatency]) -> f64 {
        if utts.is_empty() {
            return f64::NAN;
        }
        utts.iter().map(|u| u.mean_ms).sum::<f64>() / utts.len() as f64
    }
}

/// All tokens pooled: summed times over summed token counts.
pub struct Pooled;

impl LatencyAveraging for Pooled {
    fn name(&self) -> &'static str {
        "pooled"
    }

    fn aggregate(&self, utts: &[UtteranceLatency]) -> f64 {
        let n: usize = utts.iter().map(|u| u.tokens).sum();
        if n == 0 {
            return f64::NAN;
        }
        utts.iter().map(|u| u.total_ms).sum::<f64>() / n as f64
    }
}

pub fn averaging_registry() -> &'static Registry<dyn LatencyAveraging> {
    static REG: OnceLock<Registry<dyn LatencyAveraging>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn LatencyAveraging> = Registry::new("latency averaging");
        reg.register("per-utterance", |_| Ok(Box::new(PerUtterance)));
        reg.register("pooled", |_| Ok(Box::new(Pooled)));
        reg
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LatencyReport {
    pub averaging: String,
    pub frame_ms: f64,
    pub mean_ms: f64,
    pub skipped: usize,
    pub utterances: Vec<UtteranceLatency>,
}

/// Aligns every reference under the model (rows partially normalized at the
/// model's own interpolation weight) and averages expected emission times.
pub fn average_emission_time(
    model: &Transducer,
    data: &Dataset,
    frame_ms: f64,
    averaging: &str,
) -> Result<LatencyReport> {
    let avg = averaging_registry().build(&StrategySpec::parse(averaging))?;
    let mut utterances = Vec::new();
    let mut skipped = 0;
    for u in &data.utterances {
        if u.tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let pass = model.forward(&u.features, std::slice::from_ref(&u.tokens), &u.topology)?;
        let grid = apply_partial_normalization(&pass.hyps[0].grid, model.params.alpha);
        match expectation_forward(&grid, &u.tokens, frame_ms)?.and_then(|e| e.expectation()) {
            Some(total) => utterances.push(UtteranceLatency {
                id: u.id.clone(),
                tokens: u.tokens.len(),
                total_ms: total,
                mean_ms: total / u.tokens.len() as f64,
            }),
            None => skipped += 1,
        }
    }
    Ok(LatencyReport {
        averaging: avg.name().to_string(),
        frame_ms,
        mean_ms: avg.aggregate(&utterances),
        skipped,
        utterances,
    })
}

/// `system - baseline`; both reports must cover the same utterances.
pub fn latency_delta(system: &LatencyReport, baseline: &LatencyReport) -> Result<f64> {
    let ids = |r: &LatencyReport| r.utterances.iter().map(|u| u.id.clone()).collect::<Vec<_>>();
    if ids(system) != ids(baseline) || system.averaging != baseline.averaging {
        return Err(Error::Dataset("latency reports cover different utterances".into()));
    }
    Ok(system.mean_ms - baseline.mean_ms)
}

/// Log mass of an element, for comparing against `forward_score`.
pub fn mass(e: &ExpectationWeight) -> LogWeight {
    LogWeight::new(e.w)
}
