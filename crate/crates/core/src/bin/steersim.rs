use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use steersim::cli::{self, RunConfig};
use steersim::flowdata::threshold_name;

#[derive(Parser)]
#[command(
    name = "steersim",
    version,
    about = "Carrier traffic-steering predictors and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic flow corpus.
    GenFlows(Common),
    /// Generate radio samples with secondary-coverage labels.
    GenRadio(Common),
    /// Generate device trajectories along canonical routes.
    GenTrajectories(Common),
    /// Train the three volume classifiers.
    TrainTraffic {
        #[command(flatten)]
        common: Common,
        /// Flow JSONL (default: <out>/flows.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the secondary-coverage classifier.
    TrainCoverage {
        #[command(flatten)]
        common: Common,
        /// Radio sample JSONL (default: <out>/radio.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the offload selection experiment with trained models.
    Steer {
        #[command(flatten)]
        common: Common,
        /// Directory holding traffic_model.json and coverage_model.json (default: <out>).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Mine routes from trajectories and evaluate matching and handover prediction.
    Mobility {
        #[command(flatten)]
        common: Common,
        /// Trajectory JSONL (default: <out>/trajectories.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run every stage and write summary.json and report.md.
    Report(Common),
}

fn load(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    let out = config.out_dir.clone();
    Ok((config, out))
}

fn or_default(path: &Option<PathBuf>, out: &Path, file: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(file))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenFlows(common) => {
            let (config, out) = load(&common)?;
            let m = cli::cmd_gen_flows(&config, &out)?;
            println!("flows: {}", m.outputs[cli::FLOWS_FILE]);
        }
        Command::GenRadio(common) => {
            let (config, out) = load(&common)?;
            let m = cli::cmd_gen_radio(&config, &out)?;
            println!(
                "radio samples: {} (covered {:.3})",
                m.outputs[cli::RADIO_FILE],
                m.metrics["covered_fraction"]
            );
        }
        Command::GenTrajectories(common) => {
            let (config, out) = load(&common)?;
            let m = cli::cmd_gen_trajectories(&config, &out)?;
            println!("trajectories: {}", m.outputs[cli::TRAJECTORIES_FILE]);
        }
        Command::TrainTraffic { common, data } => {
            let (config, out) = load(&common)?;
            let data = or_default(&data, &out, cli::FLOWS_FILE);
            let (_, aucs) = cli::cmd_train_traffic(&config, &data, &out)?;
            for (t, auc) in aucs {
                println!("traffic auc > {}: {auc:.3}", threshold_name(t));
            }
        }
        Command::TrainCoverage { common, data } => {
            let (config, out) = load(&common)?;
            let data = or_default(&data, &out, cli::RADIO_FILE);
            let (_, auc) = cli::cmd_train_coverage(&config, &data, &out)?;
            println!("coverage auc: {auc:.3}");
        }
        Command::Steer { common, models } => {
            let (config, out) = load(&common)?;
            let models = models.unwrap_or_else(|| out.clone());
            let (_, _, savings) = cli::cmd_steer(&config, &models, &out)?;
            print!("{savings}");
        }
        Command::Mobility { common, data } => {
            let (config, out) = load(&common)?;
            let data = or_default(&data, &out, cli::TRAJECTORIES_FILE);
            let (_, r) = cli::cmd_mobility(&config, &data, &out)?;
            println!("adjusted rand index: {:.3}", r.adjusted_rand_index);
            println!("top-1 route accuracy: {:.3}", r.top1_accuracy);
            println!("handover accuracy: {:.3}", r.handover_accuracy);
        }
        Command::Report(common) => {
            let (config, out) = load(&common)?;
            let summary = cli::cmd_report(&config, &out)?;
            print!("{}", summary.to_markdown());
        }
    }
    Ok(())
}

/// Error chain joined with ": ", skipping causes the previous message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEERSIM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
