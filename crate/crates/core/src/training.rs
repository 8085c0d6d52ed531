//! Schedules, optimizer, configuration and the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    epoch_order, load_dataset, make_batches, make_mail_nail_dataset, make_synthetic_dataset, Dataset,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::lattice::{
    apply_partial_normalization, forward_score, WeightGrid,
};
use crate::logspace::lse;
use crate::losses::{build_objective, local_nll, regularizer_sum, HypothesisSet, DEFAULT_LAMBDA};
use crate::model::{checkpoint, Gradients, ModelConfig, ModelParams, Transducer};
use crate::search::{all_sequences, build_training_hypotheses, decode, ModelScorer, SearchConfig};

pub const DEFAULT_REFRESH_PERIOD: usize = 20;
pub const DEFAULT_BATCH_BUDGET: usize = 2000;

/// Interpolation and regularizer schedules over (fractional) epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub branch_epoch: f64,
    pub alpha_target: f64,
    /// Decrease of alpha per epoch after branching.
    pub alpha_slope: f64,
    pub lambda_target: f64,
    pub lambda_ramp_epochs: f64,
    /// Epoch at which the lambda ramp begins; defaults to
    /// `branch_epoch - lambda_ramp_epochs`.
    pub lambda_start: Option<f64>,
}

impl Schedule {
    /// Branches after a quarter of training.
    pub fn for_epochs(epochs: usize) -> Self {
        Schedule {
            branch_epoch: (epochs as f64 * 0.25).round(),
            alpha_target: 0.3,
            alpha_slope: 0.25,
            lambda_target: DEFAULT_LAMBDA,
            lambda_ramp_epochs: 1.0,
            lambda_start: None,
        }
    }

    /// Plain local training: alpha stays 1, no regularizer.
    pub fn local() -> Self {
        Schedule {
            branch_epoch: f64::INFINITY,
            alpha_target: 1.0,
            alpha_slope: 0.0,
            lambda_target: 0.0,
            lambda_ramp_epochs: 1.0,
            lambda_start: None,
        }
    }

    pub fn lambda_start(&self) -> f64 {
        self.lambda_start
            .unwrap_or(self.branch_epoch - self.lambda_ramp_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_target) {
            return Err(Error::Config(format!("alpha_target {} outside [0, 1]", self.alpha_target)));
        }
        if self.alpha_slope < 0.0 || self.lambda_target < 0.0 || self.lambda_ramp_epochs < 0.0 {
            return Err(Error::Config("schedule slopes and targets must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn alpha_schedule(epoch: f64, s: &Schedule) -> f64 {
    if epoch < s.branch_epoch {
        return 1.0;
    }
    (1.0 - s.alpha_slope * (epoch - s.branch_epoch)).max(s.alpha_target).min(1.0)
}

pub fn lambda_schedule(epoch: f64, s: &Schedule) -> f64 {
    let start = s.lambda_start();
    if epoch <= start {
        return 0.0;
    }
    if s.lambda_ramp_epochs == 0.0 {
        return s.lambda_target;
    }
    (s.lambda_target * (epoch - start) / s.lambda_ramp_epochs).min(s.lambda_target)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub hyper: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(hyper: AdamConfig, num_values: usize) -> Self {
        Adam {
            hyper,
            step: 0,
            m: vec![0.0; num_values],
            v: vec![0.0; num_values],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One adaptive-moment update with bias correction.
pub fn optimizer_step(params: &mut ModelParams, grads: &Gradients, state: &mut Adam) -> Result<()> {
    let g = grads.flatten();
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", g[i])));
    }
    if g.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            what: "optimizer state",
            expected: state.m.len(),
            actual: g.len(),
        });
    }
    let h = state.hyper;
    state.step += 1;
    let c1 = 1.0 - h.beta1.powi(state.step as i32);
    let c2 = 1.0 - h.beta2.powi(state.step as i32);
    let mut p = params.flatten();
    for i in 0..p.len() {
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        p[i] -= h.lr * mhat / (vhat.sqrt() + h.eps);
    }
    params.unflatten(&p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DataSource {
    MailNail { ambiguity: f64, copies: usize },
    Synthetic(SyntheticSpec),
    File(PathBuf),
}

impl DataSource {
    /// `(train, heldout)`.
    pub fn load(&self, seed: u64, heldout: usize) -> Result<(Dataset, Dataset)> {
        let ds = match self {
            DataSource::MailNail { ambiguity, copies } => make_mail_nail_dataset(*ambiguity, *copies, seed),
            DataSource::Synthetic(spec) => make_synthetic_dataset(spec, seed)?,
            DataSource::File(p) => load_dataset(p)?,
        };
        if ds.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        Ok(ds.split(heldout))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub objective: String,
    /// `feat_dim` and `vocab` are taken from the data.
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub search: SearchConfig,
    pub refresh_period: usize,
    /// Maximum summed frames per batch.
    pub batch_budget: usize,
    pub optimizer: AdamConfig,
    pub jobs: usize,
    pub data: DataSource,
    pub heldout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 8;
        TrainConfig {
            seed: 0,
            epochs,
            objective: "interpolated".into(),
            model: ModelConfig::small(1, 1),
            schedule: Schedule::for_epochs(epochs),
            search: SearchConfig::default(),
            refresh_period: DEFAULT_REFRESH_PERIOD,
            batch_budget: DEFAULT_BATCH_BUDGET,
            optimizer: AdamConfig::default(),
            jobs: 1,
            data: DataSource::MailNail {
                ambiguity: 1.0,
                copies: 20,
            },
            heldout: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
}

impl TrainConfig {
    /// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut branch_set = false;
        let mut synth = SyntheticSpec::default();
        let mut data_kind = String::from("mail-nail");
        let (mut ambiguity, mut copies) = (1.0, 20usize);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => cfg.seed = parse(k, v)?,
                "epochs" => cfg.epochs = parse(k, v)?,
                "objective" => cfg.objective = v.to_string(),
                "jobs" => cfg.jobs = parse(k, v)?,
                "heldout" => cfg.heldout = parse(k, v)?,
                "refresh_period" => cfg.refresh_period = parse(k, v)?,
                "batch_budget" => cfg.batch_budget = parse(k, v)?,
                "nbest" => cfg.search.nbest = parse(k, v)?,
                "beam" => cfg.search.beam = parse(k, v)?,
                "max_emissions" => cfg.search.max_emissions = parse(k, v)?,
                "lr" => cfg.optimizer.lr = parse(k, v)?,
                "beta1" => cfg.optimizer.beta1 = parse(k, v)?,
                "beta2" => cfg.optimizer.beta2 = parse(k, v)?,
                "eps" => cfg.optimizer.eps = parse(k, v)?,
                "branch_epoch" => {
                    cfg.schedule.branch_epoch = parse(k, v)?;
                    branch_set = true;
                }
                "alpha_target" => cfg.schedule.alpha_target = parse(k, v)?,
                "alpha_slope" => cfg.schedule.alpha_slope = parse(k, v)?,
                "lambda" | "lambda_target" => cfg.schedule.lambda_target = parse(k, v)?,
                "lambda_ramp_epochs" => cfg.schedule.lambda_ramp_epochs = parse(k, v)?,
                "lambda_start" => cfg.schedule.lambda_start = Some(parse(k, v)?),
                "context" => cfg.model.context = parse(k, v)?,
                "enc_hidden" => cfg.model.enc_hidden = parse(k, v)?,
                "enc_dim" => cfg.model.enc_dim = parse(k, v)?,
                "embed_dim" => cfg.model.embed_dim = parse(k, v)?,
                "pred_dim" => cfg.model.pred_dim = parse(k, v)?,
                "joiner_dim" => cfg.model.joiner_dim = parse(k, v)?,
                "predictor" => cfg.model.predictor = v.to_string(),
                "data" => data_kind = v.to_string(),
                "ambiguity" => ambiguity = parse(k, v)?,
                "copies" => copies = parse(k, v)?,
                "synth_vocab" => synth.vocab = parse(k, v)?,
                "synth_min_tokens" => synth.min_tokens = parse(k, v)?,
                "synth_max_tokens" => synth.max_tokens = parse(k, v)?,
                "synth_frames_per_token" => synth.frames_per_token = parse(k, v)?,
                "synth_noise" => synth.noise = parse(k, v)?,
                "synth_feat_dim" => synth.feat_dim = parse(k, v)?,
                "synth_count" => synth.count = parse(k, v)?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        if !branch_set {
            cfg.schedule.branch_epoch = Schedule::for_epochs(cfg.epochs).branch_epoch;
        }
        cfg.data = match data_kind.as_str() {
            "mail-nail" => DataSource::MailNail { ambiguity, copies },
            "synthetic" => DataSource::Synthetic(synth),
            path => DataSource::File(PathBuf::from(path)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.search.nbest == 0 || self.refresh_period == 0 || self.jobs == 0 {
            return Err(Error::Config("nbest, refresh_period and jobs must be >= 1".into()));
        }
        if self.batch_budget == 0 {
            return Err(Error::Config("batch_budget must be >= 1".into()));
        }
        self.search
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.schedule.validate()?;
        build_objective(&self.objective)?;
        Ok(())
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            feat_dim: data.feat_dim,
            vocab: data.vocab,
            ..self.model.clone()
        }
    }
}

/// Health of the competitor mass for one utterance or batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuardStatus {
    /// `logsumexp(competitors) - reference`; `-inf` with no competitors.
    pub metric: f64,
    /// The global N-best loss implied by `metric`, `ln(1 + e^metric)`.
    pub global_loss: f64,
    pub flagged: bool,
}

/// Global loss below which the competitors are considered collapsed.
pub const GUARD_LOSS_FLOOR: f64 = 1e-6;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(logsumexp(competitor scores) - reference score)`, flagged when the
/// implied global loss falls below `floor`.
pub fn competitor_mass_guard(reference: f64, competitors: &[f64], floor: f64) -> GuardStatus {
    let metric = lse(competitors) - reference;
    let global_loss = softplus(metric);
    GuardStatus {
        metric,
        global_loss,
        flagged: global_loss < floor,
    }
}

/// Batch-level guard: mean global loss over utterances.
pub fn batch_guard(items: &[GuardStatus], floor: f64) -> GuardStatus {
    if items.is_empty() {
        return GuardStatus {
            metric: f64::NEG_INFINITY,
            global_loss: 0.0,
            flagged: true,
        };
    }
    let global_loss = items.iter().map(|g| g.global_loss).sum::<f64>() / items.len() as f64;
    GuardStatus {
        metric: global_loss.exp_m1().ln(),
        global_loss,
        flagged: global_loss < floor,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub progress: f64,
    pub loss: f64,
    pub task_loss: f64,
    pub reg_metric: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub guard: f64,
    pub guard_fired: bool,
    pub hypotheses: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub local_nll: f64,
    pub reg_metric: f64,
    pub heldout_local_nll: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Transducer,
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Mean over utterances of `-log p_local(ref)` (rows softmax-normalized).
pub fn mean_local_nll(model: &Transducer, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let mut total = 0.0;
    for u in &data.utterances {
        let pass = model.forward(&u.features, std::slice::from_ref(&u.tokens), &u.topology)?;
        total += local_nll(&pass.hyps[0].grid, &u.tokens)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Mean squared row log-sum over every reference grid.
pub fn mean_reference_reg_metric(model: &Transducer, data: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut rows = 0usize;
    for u in &data.utterances {
        let pass = model.forward(&u.features, std::slice::from_ref(&u.tokens), &u.topology)?;
        for row in pass.hyps[0].grid.rows() {
            let l = lse(row);
            sum += l * l;
            rows += 1;
        }
    }
    Ok(if rows == 0 { 0.0 } else { sum / rows as f64 })
}

/// Exactly normalized NLL of the reference over every sequence of length
/// `<= max_len`, with rows partially normalized at `alpha`.
pub fn exact_nll(
    model: &Transducer,
    utt: &crate::data::Utterance,
    alpha: f64,
    max_len: usize,
) -> Result<f64> {
    let space = all_sequences(model.config().vocab, max_len);
    if !space.contains(&utt.tokens) {
        return Err(Error::InvalidArgument("reference is outside the enumerated space".into()));
    }
    let pass = model.forward(&utt.features, &space, &utt.topology)?;
    let mut scores = Vec::with_capacity(space.len());
    let mut reference = f64::NAN;
    for (z, h) in space.iter().zip(&pass.hyps) {
        let g = apply_partial_normalization(&h.grid, alpha);
        let s = forward_score(&g, z)?.value();
        if *z == utt.tokens {
            reference = s;
        }
        scores.push(s);
    }
    Ok(lse(&scores) - reference)
}

pub fn mean_exact_nll(model: &Transducer, data: &Dataset, alpha: f64, max_len: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let mut total = 0.0;
    for u in &data.utterances {
        total += exact_nll(model, u, alpha, max_len)?;
    }
    Ok(total / data.len() as f64)
}

/// Top-1 beam search per utterance at the model's own interpolation weight.
pub fn decode_dataset(
    model: &Transducer,
    data: &Dataset,
    beam: usize,
    max_emissions: usize,
) -> Result<Vec<crate::search::Hypothesis>> {
    data.utterances
        .iter()
        .map(|u| {
            let scorer = ModelScorer::new(model, &u.features, model.params.alpha, u.topology.clone())?;
            decode(&scorer, beam, max_emissions)
        })
        .collect()
}

struct UttResult {
    task: f64,
    task_grads: Vec<WeightGrid>,
    reg_sum: f64,
    reg_rows: usize,
    reg_grads: Vec<WeightGrid>,
    pass: crate::model::ForwardPass,
    guard: GuardStatus,
    hyps: usize,
}

/// Per-utterance hypothesis sets for a stretch of upcoming batches.
struct HypCache {
    sets: BTreeMap<usize, HypothesisSet>,
    with_competitors: bool,
    until_step: usize,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs training. When `out` is given, writes `metrics.jsonl`,
/// `epochs.jsonl` and one checkpoint per epoch there.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, heldout: Option<&Dataset>, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    train_set.validate()?;
    let objective = build_objective(&cfg.objective)?;
    let mut model = Transducer::new(&cfg.model_config(train_set), cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, model.params.num_values());
    let pool = thread_pool(cfg.jobs)?;

    let mut metrics = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some((
                std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?),
                std::io::BufWriter::new(std::fs::File::create(dir.join("epochs.jsonl"))?),
            ))
        }
        None => None,
    };

    // Whole batch plan up front so refreshes can look ahead across epochs.
    let frames: Vec<usize> = train_set.utterances.iter().map(|u| u.frames()).collect();
    let mut plan: Vec<(usize, usize, usize, Vec<usize>)> = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let ordered: Vec<usize> = order.iter().map(|&i| frames[i]).collect();
        let batches = make_batches(&ordered, cfg.batch_budget);
        let nb = batches.len();
        for (b, idx) in batches.into_iter().enumerate() {
            plan.push((epoch, b, nb, idx.into_iter().map(|i| order[i]).collect()));
        }
    }

    let mut batch_log = Vec::with_capacity(plan.len());
    let mut epoch_log = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut cache: Option<HypCache> = None;

    for (step, (epoch, b, nb, members)) in plan.iter().enumerate() {
        let progress = *epoch as f64 + *b as f64 / *nb as f64;
        let alpha = alpha_schedule(progress, &cfg.schedule);
        let lambda = lambda_schedule(progress, &cfg.schedule);
        model.params.alpha = alpha;
        let wants = objective.uses_competitors(alpha);

        let stale = match &cache {
            None => true,
            Some(c) => step >= c.until_step || (wants && !c.with_competitors),
        };
        if step % cfg.refresh_period == 0 || stale {
            let until = (step + cfg.refresh_period).min(plan.len());
            let mut utts: Vec<usize> = plan[step..until].iter().flat_map(|p| p.3.iter().copied()).collect();
            utts.sort_unstable();
            utts.dedup();
            let sets: Vec<(usize, HypothesisSet)> = if wants {
                let m = &model;
                pool.install(|| {
                    utts.par_iter()
                        .map(|&i| {
                            let u = &train_set.utterances[i];
                            build_training_hypotheses(m, &u.features, &u.tokens, alpha, &u.topology, &cfg.search)
                                .map(|h| (i, h))
                        })
                        .collect::<Result<Vec<_>>>()
                })?
            } else {
                utts.iter()
                    .map(|&i| (i, HypothesisSet::reference_only(train_set.utterances[i].tokens.clone())))
                    .collect()
            };
            cache = Some(HypCache {
                sets: sets.into_iter().collect(),
                with_competitors: wants,
                until_step: until,
            });
        }
        let sets = &cache.as_ref().expect("refreshed").sets;

        let m = &model;
        let obj = objective.as_ref();
        let results: Vec<UttResult> = pool.install(|| {
            members
                .par_iter()
                .map(|&i| -> Result<UttResult> {
                    let u = &train_set.utterances[i];
                    let h = &sets[&i];
                    let pass = m.forward(&u.features, h.hyps(), &u.topology)?;
                    let grids: Vec<WeightGrid> = pass.hyps.iter().map(|p| p.grid.clone()).collect();
                    let out = obj.evaluate(&grids, h, alpha)?;
                    let mut reg_grads: Vec<WeightGrid> = grids.iter().map(WeightGrid::zeros_like).collect();
                    let (reg_sum, reg_rows) = regularizer_sum(&grids, &mut reg_grads);
                    let mut raw = Vec::with_capacity(grids.len());
                    for (g, z) in grids.iter().zip(h.hyps()) {
                        raw.push(forward_score(g, z)?.value());
                    }
                    let r = h.ref_index();
                    let competitors: Vec<f64> =
                        raw.iter().enumerate().filter(|(j, _)| *j != r).map(|(_, s)| *s).collect();
                    Ok(UttResult {
                        task: out.loss,
                        task_grads: out.grads,
                        reg_sum,
                        reg_rows,
                        reg_grads,
                        pass,
                        guard: competitor_mass_guard(raw[r], &competitors, GUARD_LOSS_FLOOR),
                        hyps: h.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let n = results.len() as f64;
        let rows: usize = results.iter().map(|r| r.reg_rows).sum();
        let task = results.iter().map(|r| r.task).sum::<f64>() / n;
        let reg = if rows == 0 {
            0.0
        } else {
            results.iter().map(|r| r.reg_sum).sum::<f64>() / rows as f64
        };
        let loss = task + lambda * reg;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at epoch {epoch} batch {b} (task {task}, regularizer {reg}, alpha {alpha})"
            )));
        }

        let reg_scale = if rows == 0 { 0.0 } else { lambda / rows as f64 };
        let per_utt: Vec<Gradients> = pool.install(|| {
            results
                .par_iter()
                .map(|r| {
                    let grid_grads: Vec<WeightGrid> = r
                        .task_grads
                        .iter()
                        .zip(&r.reg_grads)
                        .map(|(t, g)| {
                            let mut d = t.clone();
                            d.scale_in_place(1.0 / n);
                            if lambda != 0.0 {
                                d.add_scaled(g, reg_scale);
                            }
                            d
                        })
                        .collect();
                    m.backprop(&r.pass, &grid_grads)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut grads = model.params.zeros_like();
        for g in &per_utt {
            grads.add_scaled(g, 1.0);
        }
        optimizer_step(&mut model.params, &grads, &mut adam)?;
        if !model.params.all_finite() {
            return Err(Error::NonFinite(format!("parameters at epoch {epoch} batch {b}")));
        }

        let guards: Vec<GuardStatus> = results.iter().map(|r| r.guard).collect();
        let guard = batch_guard(&guards, GUARD_LOSS_FLOOR);
        let rec = BatchRecord {
            step,
            epoch: *epoch,
            batch: *b,
            progress,
            loss,
            task_loss: task,
            reg_metric: reg,
            alpha,
            lambda,
            guard: guard.metric,
            guard_fired: guard.flagged && alpha < 1.0,
            hypotheses: results.iter().map(|r| r.hyps as f64).sum::<f64>() / n,
        };
        if let Some((w, _)) = metrics.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        batch_log.push(rec);

        if *b + 1 == *nb {
            let end = (*epoch + 1) as f64;
            let rec = EpochRecord {
                epoch: *epoch,
                alpha,
                lambda: lambda_schedule(end, &cfg.schedule),
                local_nll: mean_local_nll(&model, train_set)?,
                reg_metric: mean_reference_reg_metric(&model, train_set)?,
                heldout_local_nll: match heldout {
                    Some(h) if !h.is_empty() => Some(mean_local_nll(&model, h)?),
                    _ => None,
                },
            };
            if let Some(dir) = out {
                let (_, w) = metrics.as_mut().expect("open with out");
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
                let path = dir.join(format!("ckpt-epoch-{:03}.bin", epoch + 1));
                checkpoint::save(&model.params, &path)?;
                checkpoints.push(path);
            }
            epoch_log.push(rec);
        }
    }
    if let Some((mut a, mut e)) = metrics {
        a.flush()?;
        e.flush()?;
    }
    if let Some(dir) = out {
        checkpoint::save(&model.params, &dir.join("final.bin"))?;
    }
    Ok(TrainOutcome {
        model,
        batches: batch_log,
        epochs: epoch_log,
        checkpoints,
    })
}

/// Reads `metrics.jsonl` back.
pub fn read_metrics(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub const CURVE_COLUMNS: [&str; 8] = [
    "step", "progress", "loss", "task_loss", "reg_metric", "alpha", "lambda", "guard",
];

/// CSV of the training curves: loss and squared-normalization metric, and
/// the alpha/lambda schedules, per batch.
pub fn export_curves<W: Write>(records: &[serde_json::Value], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_COLUMNS)
        .map_err(|e| Error::Io(e.into()))?;
    for r in records {
        let row: Vec<String> = CURVE_COLUMNS
            .iter()
            .map(|c| match r.get(*c) {
                Some(serde_json::Value::Null) | None => String::new(),
                Some(v) => v.to_string(),
            })
            .collect();
        out.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint_model(path: &Path) -> Result<Transducer> {
    Transducer::from_params(checkpoint::load(path)?)
}
