//! Toy experiments: the mail/nail label-bias demonstration and the
//! normalization-regularizer ablation.

use serde::Serialize;

use crate::data::{make_mail_nail_dataset, make_synthetic_dataset, Dataset, SyntheticSpec};
use crate::error::Result;
use crate::latency::{average_emission_time, latency_delta, LatencyReport, DEFAULT_FRAME_MS};
use crate::model::{ModelConfig, Transducer};
use crate::search::SearchConfig;
use crate::training::{
    decode_dataset, mean_exact_nll, mean_local_nll, train, AdamConfig, DataSource, EpochRecord, Schedule,
    TrainConfig,
};
use crate::wer::{wer, WerResult};

#[derive(Clone, Debug, Serialize)]
pub struct LabelBiasConfig {
    pub seed: u64,
    /// Utterances per class.
    pub copies: usize,
    pub local_epochs: usize,
    /// Extra epochs for the global model after branching off the local one.
    pub global_epochs: usize,
    pub alpha_target: f64,
    pub lr: f64,
    pub batch_budget: usize,
    pub search: SearchConfig,
    pub predictor: String,
    pub jobs: usize,
}

impl Default for LabelBiasConfig {
    fn default() -> Self {
        LabelBiasConfig {
            seed: 1,
            copies: 16,
            local_epochs: 100,
            global_epochs: 30,
            alpha_target: 0.3,
            lr: 1e-2,
            batch_budget: 80,
            search: SearchConfig {
                beam: 16,
                nbest: 10,
                max_emissions: 2,
            },
            predictor: "recurrent".into(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemSummary {
    pub alpha: f64,
    /// Mean `-log p(ref)` with rows softmax-normalized.
    pub local_nll: f64,
    /// Mean NLL normalized exactly over every sequence the windows admit,
    /// rows partially normalized at `alpha`.
    pub exact_nll: f64,
    pub token_error: WerResult,
    pub decodes: Vec<(String, String)>,
    pub latency: LatencyReport,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelBiasReport {
    pub config: LabelBiasConfig,
    pub local: SystemSummary,
    pub global: SystemSummary,
    /// Global minus local mean expected emission time (ms).
    pub latency_delta_ms: f64,
}

fn summarize(model: &Transducer, data: &Dataset, search: &SearchConfig, epochs: Vec<EpochRecord>) -> Result<SystemSummary> {
    let max_len = data.utterances[0].topology.max_tokens().unwrap_or(2);
    let hyps = decode_dataset(model, data, search.beam, search.max_emissions)?;
    let mut errs = Vec::new();
    let mut decodes = Vec::new();
    for (u, h) in data.utterances.iter().zip(&hyps) {
        errs.push(wer(u.tokens.as_slice(), h.tokens.as_slice())?);
        decodes.push((data.render(&u.tokens), data.render(&h.tokens)));
    }
    Ok(SystemSummary {
        alpha: model.params.alpha,
        local_nll: mean_local_nll(model, data)?,
        exact_nll: mean_exact_nll(model, data, model.params.alpha, max_len)?,
        token_error: WerResult::combine(&errs)?,
        decodes,
        latency: average_emission_time(model, data, DEFAULT_FRAME_MS, "per-utterance")?,
        epochs,
    })
}

fn mail_nail_train_config(cfg: &LabelBiasConfig, objective: &str, epochs: usize, schedule: Schedule) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed,
        epochs,
        objective: objective.into(),
        model: ModelConfig {
            predictor: cfg.predictor.clone(),
            ..ModelConfig::small(1, 1)
        },
        schedule,
        search: cfg.search,
        refresh_period: 1,
        batch_budget: cfg.batch_budget,
        optimizer: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        jobs: cfg.jobs,
        data: DataSource::MailNail {
            ambiguity: 1.0,
            copies: cfg.copies,
        },
        heldout: 0,
    }
}

/// Trains a locally normalized model and a global model branched off it on
/// fully ambiguous mail/nail data, then evaluates both.
pub fn label_bias_demo(cfg: &LabelBiasConfig) -> Result<LabelBiasReport> {
    let data = make_mail_nail_dataset(1.0, cfg.copies, cfg.seed);

    let local_cfg = mail_nail_train_config(cfg, "local", cfg.local_epochs, Schedule::local());
    let local = train(&local_cfg, &data, None, None)?;

    let schedule = Schedule {
        branch_epoch: cfg.local_epochs as f64,
        alpha_target: cfg.alpha_target,
        alpha_slope: 0.25,
        lambda_target: 0.0,
        lambda_ramp_epochs: 1.0,
        lambda_start: None,
    };
    let global_cfg = mail_nail_train_config(cfg, "interpolated", cfg.local_epochs + cfg.global_epochs, schedule);
    let global = train(&global_cfg, &data, None, None)?;

    let local_sum = summarize(&local.model, &data, &cfg.search, local.epochs)?;
    let global_sum = summarize(&global.model, &data, &cfg.search, global.epochs)?;
    let delta = latency_delta(&global_sum.latency, &local_sum.latency)?;
    Ok(LabelBiasReport {
        config: cfg.clone(),
        local: local_sum,
        global: global_sum,
        latency_delta_ms: delta,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularizerConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub heldout: usize,
    pub epochs: usize,
    /// Epoch at which the lambda ramp begins.
    pub ramp_start: f64,
    pub ramp_epochs: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_budget: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            seed: 3,
            // Many small steps per epoch: at this weight the regularizer
            // only shows through once Adam has averaged out minibatch noise.
            data: SyntheticSpec {
                count: 2000,
                ..SyntheticSpec::default()
            },
            heldout: 200,
            epochs: 8,
            ramp_start: 2.0,
            ramp_epochs: 1.0,
            lambda: 0.01,
            lr: 2e-2,
            batch_budget: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularizerReport {
    pub config: RegularizerConfig,
    /// Reference-grid metric at the end of the epoch before the ramp.
    pub pre_ramp_metric: f64,
    /// Same metric two epochs after the ramp begins.
    pub post_ramp_metric: f64,
    pub final_nll_with: f64,
    pub final_nll_without: f64,
    pub with_lambda: Vec<EpochRecord>,
    pub without_lambda: Vec<EpochRecord>,
}

/// Local training on synthetic data with and without the regularizer ramp.
pub fn regularizer_experiment(cfg: &RegularizerConfig) -> Result<RegularizerReport> {
    let data = make_synthetic_dataset(&cfg.data, cfg.seed)?;
    let (train_set, heldout) = data.split(cfg.heldout);
    let run = |lambda: f64| {
        let tc = TrainConfig {
            seed: cfg.seed,
            epochs: cfg.epochs,
            objective: "interpolated".into(),
            model: ModelConfig::small(1, 1),
            schedule: Schedule {
                lambda_target: lambda,
                lambda_ramp_epochs: cfg.ramp_epochs,
                lambda_start: Some(cfg.ramp_start),
                ..Schedule::local()
            },
            search: SearchConfig::default(),
            refresh_period: 20,
            batch_budget: cfg.batch_budget,
            optimizer: AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            jobs: 1,
            data: DataSource::Synthetic(cfg.data.clone()),
            heldout: cfg.heldout,
        };
        train(&tc, &train_set, Some(&heldout), None)
    };
    let with = run(cfg.lambda)?;
    let without = run(0.0)?;
    let start = cfg.ramp_start.round() as usize;
    let metric_after = |epochs: usize| with.epochs[(start + epochs).min(with.epochs.len()) - 1].reg_metric;
    let last_nll = |e: &[EpochRecord]| e.last().and_then(|r| r.heldout_local_nll).unwrap_or(f64::NAN);
    Ok(RegularizerReport {
        config: cfg.clone(),
        pre_ramp_metric: metric_after(0),
        post_ramp_metric: metric_after(2),
        final_nll_with: last_nll(&with.epochs),
        final_nll_without: last_nll(&without.epochs),
        with_lambda: with.epochs,
        without_lambda: without.epochs,
    })
}
