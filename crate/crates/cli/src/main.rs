//! `slotsched`: synthesize logs, fit the behaviour emulator, train the
//! scheduling agent, and evaluate it off-policy.
//!
//! Every command is driven by one flat key=value config file; `--seed`
//! overrides the config's seed without editing the file. Exit codes: 0 on
//! success, 2 for config problems, 3 for data/state/io problems, 4 for
//! numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slotsched_core::config::RunConfig;
use slotsched_core::emulator::{fit_behaviour_model, load_model, save_model};
use slotsched_core::error::{Error, Result};
use slotsched_core::eval::{evaluate, evaluate_uniform, read_metrics, report};
use slotsched_core::events::{
    aggregate_events, generate_synthetic, read_event_log, read_event_meta_csv, read_sessions_csv,
    split_chronological, write_event_log, write_event_meta_csv, write_sessions_csv,
};
use slotsched_core::learner::{load_agent, read_curves, save_agent, train, write_curves};

#[derive(Parser)]
#[command(name = "slotsched", version, about = "Multi-task scheduling of recurring live events")]
struct Cli {
    /// Flat key=value config file; builtin defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic session log and event metadata as CSV.
    Generate {
        /// Directory receiving sessions.csv and event_meta.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Aggregate session and metadata CSVs into an event log.
    Ingest {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// Event log destination (CSV with a timezone sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the behaviour emulator on the chronological train split.
    FitEmulator {
        #[arg(long)]
        log: PathBuf,
        /// Model destination (binary with a JSON sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the scheduling agent inside the fitted emulator.
    Train {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Agent checkpoint destination.
        #[arg(long)]
        out: PathBuf,
        /// Training curves CSV destination.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Evaluate a trained agent on the test split.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        agent: PathBuf,
        /// Metrics JSON destination.
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate the uniform-random baseline to this path.
        #[arg(long)]
        baseline_out: Option<PathBuf>,
    },
    /// Render a metrics file and optional curves into a report directory.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 2,
                Error::Domain(_) | Error::State(_) | Error::Data(_) | Error::Io { .. } => 3,
                Error::Numeric(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Generate { out_dir } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let (sessions, metas, vocab, _) = generate_synthetic(&config.synth, config.seed)?;
            let sessions_path = out_dir.join("sessions.csv");
            let meta_path = out_dir.join("event_meta.csv");
            write_sessions_csv(&sessions_path, &sessions, &vocab)?;
            write_event_meta_csv(&meta_path, &metas)?;
            println!(
                "wrote {} sessions across {} events to {}",
                sessions.len(),
                metas.len(),
                out_dir.display()
            );
        }
        Command::Ingest { sessions, meta, out } => {
            let (sessions, vocab) = read_sessions_csv(&sessions)?;
            let metas = read_event_meta_csv(&meta)?;
            let log = aggregate_events(&sessions, &metas, &vocab, config.slot_count)?;
            write_event_log(&out, &log)?;
            let mean_u: f64 = log.events.iter().map(|e| e.u).sum::<f64>() / log.len() as f64;
            let mean_v: f64 = log.events.iter().map(|e| e.v).sum::<f64>() / log.len() as f64;
            println!(
                "ingested {} events (mean engagement {mean_u:.4}, mean adoption {mean_v:.4}) into {}",
                log.len(),
                out.display()
            );
        }
        Command::FitEmulator { log, out } => {
            let log = read_event_log(&log)?;
            let (train_split, _, _) = split_chronological(
                &log,
                (config.train_frac, config.val_frac, config.test_frac),
            )?;
            let model = fit_behaviour_model(&train_split, &config, config.seed)?;
            save_model(&model, &config, &out)?;
            let l = model.losses();
            println!(
                "fitted behaviour model on {} events: engagement mse {:.6}, adoption mse {:.6}, slot ce {:.6}",
                train_split.len(),
                l.engagement_mse,
                l.adoption_mse,
                l.slot_cross_entropy
            );
        }
        Command::Train { log, model, out, curves } => {
            let log = read_event_log(&log)?;
            let model = load_model(&model)?;
            let (train_split, _, _) = split_chronological(
                &log,
                (config.train_frac, config.val_frac, config.test_frac),
            )?;
            let agent = train(&config, &model, &train_split, config.seed)?;
            save_agent(&agent, &out)?;
            if let Some(curves_path) = curves {
                write_curves(&curves_path, &agent.curves)?;
            }
            let last = agent.curves.last();
            println!(
                "trained {} episodes; final mean reward {}",
                config.episodes,
                last.map_or("n/a".into(), |c| format!("{:.4} ({})", c.mean_reward, c.task))
            );
        }
        Command::Evaluate { log, model, agent, out, baseline_out } => {
            let log = read_event_log(&log)?;
            let model = load_model(&model)?;
            let agent = load_agent(&agent)?;
            let (_, _, test_split) = split_chronological(
                &log,
                (config.train_frac, config.val_frac, config.test_frac),
            )?;
            let metrics = evaluate(&agent, &model, &test_split, config.seed)?;
            let json = serde_json::to_string_pretty(&metrics)
                .map_err(|e| Error::Data(format!("encode metrics: {e}")))?;
            std::fs::write(&out, json).map_err(|e| Error::io(&out, e))?;
            println!(
                "evaluated {} trials: eng_ncis {:.4}, ad_ncis {:.4}",
                metrics.trials, metrics.eng_ncis, metrics.ad_ncis
            );
            if let Some(baseline_path) = baseline_out {
                let baseline = evaluate_uniform(&model, &test_split, &agent.config, config.seed)?;
                let json = serde_json::to_string_pretty(&baseline)
                    .map_err(|e| Error::Data(format!("encode metrics: {e}")))?;
                std::fs::write(&baseline_path, json).map_err(|e| Error::io(&baseline_path, e))?;
                println!(
                    "uniform baseline: eng_ncis {:.4}, ad_ncis {:.4}",
                    baseline.eng_ncis, baseline.ad_ncis
                );
            }
        }
        Command::Report { metrics, curves, out_dir } => {
            let metrics = read_metrics(&metrics)?;
            let curves = match curves {
                Some(p) => read_curves(&p)?,
                None => Vec::new(),
            };
            let output = report(&metrics, &curves, &out_dir)?;
            for notice in &output.notices {
                println!("notice: {notice}");
            }
            println!("wrote {} report files to {}", output.written.len(), out_dir.display());
        }
    }
    Ok(())
}
