use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use gnt_core::data::{
    load_dataset, make_mail_nail_dataset, make_synthetic_dataset, save_dataset, Dataset, Encoding, SyntheticSpec,
};
use gnt_core::error::{Error, Result};
use gnt_core::experiments::{label_bias_demo, LabelBiasConfig};
use gnt_core::gradcheck::run_suite;
use gnt_core::latency::{average_emission_time, latency_delta, DEFAULT_FRAME_MS};
use gnt_core::search::{beam_search, ModelScorer, SearchConfig, DEFAULT_MAX_EMISSIONS};
use gnt_core::training::{export_curves, load_checkpoint_model, read_metrics, train, TrainConfig};
use gnt_core::wer::{wer, WerResult};

/// `println!` that stops quietly when stdout is closed (e.g. piped to `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout().lock(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

#[derive(Parser)]
#[command(name = "gnt", version, about = "Globally normalized streaming transducer toolkit")]
struct Cli {
    /// Training configuration (flat key = value file).
    #[arg(long, global = true, env = "GNT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "GNT_SEED")]
    seed: Option<u64>,
    /// Output file, or directory for `train`.
    #[arg(long, global = true, env = "GNT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "GNT_JOBS")]
    jobs: Option<usize>,
    #[arg(long, global = true, env = "GNT_ALPHA_TARGET")]
    alpha_target: Option<f64>,
    #[arg(long, global = true, env = "GNT_NBEST")]
    nbest: Option<usize>,
    #[arg(long, global = true, env = "GNT_BEAM")]
    beam: Option<usize>,
    #[arg(long, global = true, env = "GNT_LAMBDA")]
    lambda: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config; writes metrics, per-epoch checkpoints and final.bin to --out.
    Train,
    /// Top-1 beam search over a dataset.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file, or `mail-nail` / `synthetic` to generate one.
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = DEFAULT_MAX_EMISSIONS)]
        max_emissions: usize,
    },
    /// N-best lists over a dataset.
    Nbest {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = DEFAULT_MAX_EMISSIONS)]
        max_emissions: usize,
    },
    /// Mean expected emission time of reference tokens.
    Latency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        /// Second model; reports checkpoint minus baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "per-utterance")]
        averaging: String,
        #[arg(long, default_value_t = DEFAULT_FRAME_MS)]
        frame_ms: f64,
    },
    /// Word error rate between two text files, one utterance per line.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Analytic gradients against central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Local vs global training on the ambiguous mail/nail task.
    LabelbiasDemo,
    /// CSV of loss, normalization metric and schedules from a metrics log.
    ExportCurves {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Write a generated dataset file.
    MakeData {
        /// `mail-nail` or `synthetic`.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1.0)]
        ambiguity: f64,
        #[arg(long, default_value_t = 16)]
        copies: usize,
        #[arg(long)]
        text: bool,
    },
}

fn load_data(spec: &str, seed: u64) -> Result<Dataset> {
    match spec {
        "mail-nail" => Ok(make_mail_nail_dataset(1.0, 16, seed)),
        "synthetic" => make_synthetic_dataset(&SyntheticSpec::default(), seed),
        path => load_dataset(Path::new(path)),
    }
}

fn write_json(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::io::BufWriter::new(std::fs::File::create(p)?);
        serde_json::to_writer_pretty(f, value)?;
    }
    Ok(())
}

fn search_config(cli: &Cli, max_emissions: usize, top1: bool) -> Result<SearchConfig> {
    let mut cfg = SearchConfig {
        max_emissions,
        ..SearchConfig::default()
    };
    if let Some(b) = cli.beam {
        cfg.beam = b;
        cfg.nbest = cfg.nbest.min(b);
    }
    if let Some(n) = cli.nbest {
        cfg.nbest = n;
    }
    if top1 {
        cfg.nbest = 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(a) = cli.alpha_target {
        cfg.schedule.alpha_target = a;
    }
    if let Some(n) = cli.nbest {
        cfg.search.nbest = n;
    }
    if let Some(b) = cli.beam {
        cfg.search.beam = b;
    }
    if let Some(l) = cli.lambda {
        cfg.schedule.lambda_target = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Train => {
            let cfg = train_config(cli)?;
            let dir = out.ok_or_else(|| Error::Config("train needs --out <dir>".into()))?;
            let (train_set, heldout) = cfg.data.load(cfg.seed, cfg.heldout)?;
            let result = train(&cfg, &train_set, Some(&heldout), Some(dir))?;
            write_json(Some(&dir.join("config.json")), &cfg)?;
            let last = result.epochs.last();
            say!(
                "trained {} epochs ({} steps) on {} utterances",
                result.epochs.len(),
                result.batches.len(),
                train_set.len()
            );
            if let (Some(e), Some(b)) = (last, result.batches.last()) {
                say!(
                    "final: loss {:.4}  local NLL {:.4}  reg metric {:.4}  alpha {:.3}  lambda {:.4}",
                    b.loss, e.local_nll, e.reg_metric, e.alpha, e.lambda
                );
            }
            let fired = result.batches.iter().filter(|b| b.guard_fired).count();
            if fired > 0 {
                say!("warning: competitor-mass guard fired on {fired} batches");
            }
            say!("wrote {}", dir.display());
        }
        Command::Decode {
            checkpoint,
            data,
            max_emissions,
        }
        | Command::Nbest {
            checkpoint,
            data,
            max_emissions,
        } => {
            let top1 = matches!(cli.command, Command::Decode { .. });
            let model = load_checkpoint_model(checkpoint)?;
            let ds = load_data(data, seed)?;
            let scfg = search_config(cli, *max_emissions, top1)?;
            let mut rows = Vec::new();
            let mut errs = Vec::new();
            for u in &ds.utterances {
                let scorer = ModelScorer::new(&model, &u.features, model.params.alpha, u.topology.clone())?;
                let hyps = beam_search(&scorer, &scfg)?;
                if !u.tokens.is_empty() {
                    let best = hyps.first().map(|h| h.tokens.as_slice()).unwrap_or(&[]);
                    errs.push(wer(u.tokens.as_slice(), best)?);
                }
                let list: Vec<_> = hyps
                    .iter()
                    .map(|h| json!({"tokens": h.tokens.as_slice(), "text": ds.render(&h.tokens), "score": h.score}))
                    .collect();
                // One line per hypothesis, best first: id, tokens, log score.
                for h in &hyps {
                    say!("{}\t{}\t{:.6}", u.id, ds.render(&h.tokens), h.score);
                }
                rows.push(json!({"id": u.id, "reference": ds.render(&u.tokens), "hypotheses": list}));
            }
            let total = if errs.is_empty() { None } else { Some(WerResult::combine(&errs)?) };
            if let Some(t) = &total {
                say!("token error rate {:.2}% ({} errors / {} tokens)", t.rate, t.errors(), t.ref_len);
            }
            write_json(out, &json!({"alpha": model.params.alpha, "search": scfg, "token_error": total, "utterances": rows}))?;
        }
        Command::Latency {
            checkpoint,
            data,
            baseline,
            averaging,
            frame_ms,
        } => {
            let ds = load_data(data, seed)?;
            let model = load_checkpoint_model(checkpoint)?;
            let report = average_emission_time(&model, &ds, *frame_ms, averaging)?;
            say!(
                "mean expected emission time {:.3} ms ({}, {} utterances, {} skipped)",
                report.mean_ms,
                report.averaging,
                report.utterances.len(),
                report.skipped
            );
            let base = match baseline {
                Some(b) => {
                    let r = average_emission_time(&load_checkpoint_model(b)?, &ds, *frame_ms, averaging)?;
                    let delta = latency_delta(&report, &r)?;
                    say!("baseline {:.3} ms, delta {:+.3} ms", r.mean_ms, delta);
                    Some((r, delta))
                }
                None => None,
            };
            let (b, d) = match base {
                Some((r, d)) => (Some(r), Some(d)),
                None => (None, None),
            };
            write_json(out, &json!({"system": report, "baseline": b, "delta_ms": d}))?;
        }
        Command::Wer { reference, hyp } => {
            let r = std::fs::read_to_string(reference)?;
            let h = std::fs::read_to_string(hyp)?;
            let (r, h): (Vec<&str>, Vec<&str>) = (r.lines().collect(), h.lines().collect());
            if r.len() != h.len() {
                return Err(Error::LengthMismatch {
                    what: "reference and hypothesis lines",
                    expected: r.len(),
                    actual: h.len(),
                });
            }
            let per: Vec<WerResult> = r
                .iter()
                .zip(&h)
                .filter(|(a, _)| !a.trim().is_empty())
                .map(|(a, b)| {
                    let a: Vec<&str> = a.split_whitespace().collect();
                    let b: Vec<&str> = b.split_whitespace().collect();
                    wer(&a, &b)
                })
                .collect::<Result<_>>()?;
            let total = WerResult::combine(&per)?;
            say!(
                "WER {:.2}% (S={} D={} I={} N={})",
                total.rate, total.substitutions, total.deletions, total.insertions, total.ref_len
            );
            write_json(out, &json!({"total": total, "utterances": per}))?;
        }
        Command::GradCheck { instances } => {
            let report = run_suite(seed, *instances)?;
            say!(
                "grid-level max rel. error {:.3e}; parameter max rel. error {:.3e}",
                report.max_grid(),
                report.max_parameter()
            );
            write_json(out, &report)?;
        }
        Command::LabelbiasDemo => {
            let mut cfg = LabelBiasConfig::default();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(j) = cli.jobs {
                cfg.jobs = j;
            }
            if let Some(a) = cli.alpha_target {
                cfg.alpha_target = a;
            }
            if let Some(n) = cli.nbest {
                cfg.search.nbest = n;
            }
            if let Some(b) = cli.beam {
                cfg.search.beam = b;
            }
            cfg.search.validate()?;
            let r = label_bias_demo(&cfg)?;
            say!("{:<8} {:>6} {:>10} {:>10} {:>8} {:>10}", "model", "alpha", "local NLL", "exact NLL", "error%", "latency");
            for (name, s) in [("local", &r.local), ("global", &r.global)] {
                say!(
                    "{:<8} {:>6.2} {:>10.4} {:>10.4} {:>8.1} {:>8.2}ms",
                    name, s.alpha, s.local_nll, s.exact_nll, s.token_error.rate, s.latency.mean_ms
                );
            }
            say!("latency delta (global - local): {:+.3} ms", r.latency_delta_ms);
            write_json(out, &r)?;
        }
        Command::ExportCurves { metrics } => {
            let records = read_metrics(metrics)?;
            match out {
                Some(p) => export_curves(&records, std::fs::File::create(p)?)?,
                None => export_curves(&records, std::io::stdout().lock())?,
            }
            if let Some(p) = out {
                say!("wrote {} rows to {}", records.len(), p.display());
            }
        }
        Command::MakeData {
            kind,
            ambiguity,
            copies,
            text,
        } => {
            let ds = match kind.as_str() {
                "mail-nail" => make_mail_nail_dataset(*ambiguity, *copies, seed),
                "synthetic" => make_synthetic_dataset(&SyntheticSpec::default(), seed)?,
                other => return Err(Error::InvalidArgument(format!("unknown dataset kind '{other}'"))),
            };
            let p = out.ok_or_else(|| Error::Config("make-data needs --out <file>".into()))?;
            save_dataset(&ds, if *text { Encoding::Text } else { Encoding::Binary }, p)?;
            say!("wrote {} utterances to {}", ds.len(), p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownStrategy { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
