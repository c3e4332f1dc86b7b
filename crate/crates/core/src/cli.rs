//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::learner::{continue_training, train, EpisodeLog, TrainedModel};
use crate::risk::{estimate_risk_with, CvarVariant, RiskOptions};
use crate::scheduler::{
    audit, compare_report, execute_with, fcfs_as_requested_baseline, outcomes_to_jsonl, risk_off_ablation, ExecuteOptions,
    MetricsReport,
};
use crate::session::{generate_synthetic, parse_sessions, SessionBatch};

#[derive(Debug, Parser)]
#[command(name = "evsched", version, about = "Risk-adjusted EV charging scheduling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// CVaR significance level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub cvar_variant: Option<CvarVariant>,
    /// Pin the risk term to zero.
    #[arg(long, global = true)]
    pub risk_off: bool,
    /// Output file (gen-data, fit-risk, train) or directory (run, compare).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic session batch as JSON.
    GenData {
        /// Number of sessions.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        evse_count: Option<usize>,
        #[arg(long)]
        cv_fraction: Option<f64>,
    },
    /// Fit the laxity risk model and write it as JSON.
    FitRisk {
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
    /// Train a model (or continue one) and write it with a CSV log.
    Train {
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Continue training this model.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Log path; defaults to the model path with a `.log.csv` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Execute a trained model over a batch.
    Run {
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare the FCFS as-requested baseline with a model and other reports.
    Compare {
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Extra metrics report as NAME=PATH (a metrics.json from `run`).
        #[arg(long = "report")]
        reports: Vec<String>,
        /// Also train and execute with the risk term pinned to zero.
        #[arg(long)]
        ablation: bool,
    },
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(a) = global.alpha {
        cfg.alpha = a;
    }
    if let Some(v) = global.cvar_variant {
        cfg.cvar_variant = v;
    }
    if global.risk_off {
        cfg.risk_off = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or(fallback).cloned().with_context(|| format!("no {what} path given (flag or config key)"))
}

fn read_batch(path: &Path) -> Result<SessionBatch> {
    let bytes = fs::read(path).with_context(|| format!("cannot read sessions from {}", path.display()))?;
    parse_sessions(&bytes).with_context(|| format!("invalid sessions in {}", path.display()))
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?;
    TrainedModel::from_json(&text).with_context(|| format!("invalid model {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn log_csv(rows: &[EpisodeLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["episode", "cumulative_reward", "value_loss", "policy_loss", "entropy_loss"])?;
    }
    Ok(w.into_inner()?)
}

fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), report.to_csv())?;
    write(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = cli.global.out.clone();
    match cli.command {
        Command::GenData { count, evse_count, cv_fraction } => {
            let mut gen = cfg.generator_config();
            gen.sessions = count.unwrap_or(gen.sessions);
            gen.evse_count = evse_count.unwrap_or(gen.evse_count);
            gen.cv_fraction = cv_fraction.unwrap_or(gen.cv_fraction);
            let batch = generate_synthetic(&gen, cfg.generator_seed())?;
            let path = out.unwrap_or_else(|| "sessions.json".into());
            write(&path, batch.to_json())?;
            log::info!("wrote {} sessions to {}", batch.len(), path.display());
        }
        Command::FitRisk { sessions } => {
            let batch = read_batch(&required(sessions.as_ref(), cfg.sessions.as_ref(), "sessions")?)?;
            let opts = RiskOptions { alpha: cfg.alpha, variant: cfg.cvar_variant, reference_scale: cfg.risk_reference_hours };
            let risk = estimate_risk_with(&batch, &opts)?;
            let path = out.unwrap_or_else(|| "risk.json".into());
            write(&path, serde_json::to_string_pretty(&risk)?)?;
            log::info!("risk {:.6} (normalized) written to {}", risk.cvar_normalized, path.display());
        }
        Command::Train { sessions, episodes, resume, log } => {
            let batch = read_batch(&required(sessions.as_ref(), cfg.sessions.as_ref(), "sessions")?)?;
            let (model, rows) = match resume {
                Some(p) => {
                    let model = read_model(&p)?;
                    let n = episodes.unwrap_or(cfg.episodes);
                    continue_training(model, &batch, n)?
                }
                None => {
                    let mut tc = cfg.train_config();
                    tc.episodes = episodes.unwrap_or(tc.episodes);
                    train(&batch, &tc)?
                }
            };
            let path = out.or(cfg.model.clone()).unwrap_or_else(|| "model.json".into());
            write(&path, model.to_json())?;
            let log_path = log.unwrap_or_else(|| path.with_extension("log.csv"));
            write(&log_path, log_csv(&rows)?)?;
            log::info!("model after {} episodes written to {}", model.episodes_completed, path.display());
        }
        Command::Run { sessions, model } => {
            let batch = read_batch(&required(sessions.as_ref(), cfg.sessions.as_ref(), "sessions")?)?;
            let mut model = read_model(&required(model.as_ref(), cfg.model.as_ref(), "model")?)?;
            if cfg.risk_off {
                model.config.risk_off = true;
            }
            let site = cfg.site_config(&batch)?;
            let opts = ExecuteOptions { step_minutes: cfg.step_minutes, ..Default::default() };
            let (outcomes, report) = execute_with(&mut model, &batch, &site, opts, None)?;
            audit(&outcomes, &batch, &site)?;
            let dir = out.unwrap_or_else(|| "run".into());
            write(&dir.join("outcomes.jsonl"), outcomes_to_jsonl(&outcomes))?;
            write_report(&dir, "metrics", &report)?;
            log::info!(
                "{} of {} sessions served ({:.1}%), outputs in {}",
                report.sessions_served,
                report.sessions_requested,
                report.assignment_efficiency_pct,
                dir.display()
            );
        }
        Command::Compare { sessions, model, reports, ablation } => {
            let batch = read_batch(&required(sessions.as_ref(), cfg.sessions.as_ref(), "sessions")?)?;
            let site = cfg.site_config(&batch)?;
            let dir = out.unwrap_or_else(|| "compare".into());
            let (base_out, base) = fcfs_as_requested_baseline(&batch, &site)?;
            audit(&base_out, &batch, &site)?;
            write_report(&dir, "fcfs_as_requested", &base)?;
            let mut table = vec![("fcfs_as_requested".to_string(), base)];
            if let Some(p) = model.or(cfg.model.clone()) {
                let mut m = read_model(&p)?;
                if cfg.risk_off {
                    m.config.risk_off = true;
                }
                let opts = ExecuteOptions { step_minutes: cfg.step_minutes, ..Default::default() };
                let (outcomes, report) = execute_with(&mut m, &batch, &site, opts, None)?;
                audit(&outcomes, &batch, &site)?;
                write_report(&dir, "ramals", &report)?;
                table.push(("ramals".into(), report));
            }
            if ablation {
                let report = risk_off_ablation(&cfg.train_config(), &batch, &site)?;
                write_report(&dir, "risk_off", &report)?;
                table.push(("risk_off".into(), report));
            }
            for spec in reports {
                let Some((name, path)) = spec.split_once('=') else {
                    bail!("--report expects NAME=PATH, got {spec:?}");
                };
                let text = fs::read_to_string(path).with_context(|| format!("cannot read report {path}"))?;
                let report: MetricsReport = serde_json::from_str(&text).with_context(|| format!("invalid report {path}"))?;
                table.push((name.to_string(), report));
            }
            let cmp = compare_report(&table)?;
            write(&dir.join("comparison.csv"), cmp.to_csv())?;
            write(&dir.join("comparison.json"), serde_json::to_string_pretty(&cmp)?)?;
            log::info!("comparison of {} reports written to {}", table.len(), dir.display());
        }
    }
    Ok(())
}
