//! Command-line entry point over [`tisa_planner::pipeline::Pipeline`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tisa_planner::config::RunConfig;
use tisa_planner::pipeline::{Pipeline, Policy, Split};
use tisa_planner::{Error, Result};

#[derive(Parser)]
#[command(name = "tisa", about = "Autoregressive kinematic planner: data, training, preferences, evaluation")]
struct Cli {
    /// Run config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-scene work.
    #[arg(long, global = true, env = "TISA_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and expert trajectories.
    GenData,
    /// Derive action labels from the expert trajectories.
    DeriveLabels {
        /// Cross-check against the independent naive labeler.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Imitation pre-training.
    Pretrain,
    /// Sample candidates and build preference records.
    SamplePrefs,
    /// Preference fine-tuning from the pre-trained checkpoint.
    Dpo {
        /// Single best-versus-worst pairs instead of targeted losers.
        #[arg(long)]
        naive: bool,
    },
    /// Score a policy on a corpus split.
    Eval {
        #[arg(long, default_value = "pretrained", value_parser = parse_policy)]
        policy: Policy,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Plots and summary table from earlier outputs.
    Report,
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train or test)")),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        config.paths.out_dir = out;
    }
    let pipeline = Pipeline::new(config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::GenData => {
            let m = pipeline.gen_data()?;
            println!("generated {} scenes ({} dropped)", m.scenes.len(), m.dropped.len());
            Ok(())
        }
        Command::DeriveLabels { oracle_check } => {
            let rows = pipeline.derive_labels(oracle_check)?;
            println!("derived {} labels{}", rows.len(), if oracle_check { ", oracle agrees" } else { "" });
            Ok(())
        }
        Command::Pretrain => {
            let curve = pipeline.pretrain()?;
            if let Some(last) = curve.last() {
                println!("pretrained {} epochs: ce {:.4} acc {:.3}", last.epoch, last.ce, last.acc);
            }
            Ok(())
        }
        Command::SamplePrefs => {
            let s = pipeline.sample_prefs()?;
            println!(
                "{} preference records, {} naive pairs, {} scenes skipped",
                s.records, s.naive_records, s.skipped
            );
            Ok(())
        }
        Command::Dpo { naive } => {
            let curve = pipeline.dpo(naive)?;
            if let Some(pdms) = curve.iter().rev().find_map(|r| r.heldout_pdms) {
                println!("fine-tuned {} iterations: held-out pdms {pdms:.4}", curve.len() - 1);
            }
            Ok(())
        }
        Command::Eval { policy, split } => {
            let r = pipeline.eval(policy, split)?;
            let p = &r.percent;
            println!(
                "{policy}: pdms {:.2} nc {:.2} dac {:.2} ttc {:.2} comfort {:.2} ep {:.2} ({} scenes)",
                p.pdms, p.nc, p.dac, p.ttc, p.comfort, p.ep, p.scenes
            );
            Ok(())
        }
        Command::Report => {
            let files = pipeline.report()?;
            println!("wrote {} report files", files.len());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
