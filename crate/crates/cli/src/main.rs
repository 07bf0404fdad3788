use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use innoscope_cli::commands::{self, Overrides, WhatifArgs};
use innoscope_cli::service::{self, AppState};
use innoscope_core::pca::SelectionPolicy;
use innoscope_core::Error;

#[derive(Parser)]
#[command(name = "innoscope", version, about = "Regional innovation scoreboard analytics")]
struct Cli {
    /// Scoreboard CSV.
    #[arg(long, global = true, env = "INNOSCOPE_INPUT")]
    input: Option<PathBuf>,
    /// JSON pipeline configuration.
    #[arg(long, global = true, env = "INNOSCOPE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "INNOSCOPE_SEED")]
    seed: Option<u64>,
    /// Bundle directory.
    #[arg(long, global = true, env = "INNOSCOPE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "INNOSCOPE_K")]
    k: Option<usize>,
    /// eigenvalue_gt_one, elbow_on_gt_one or manual:<q>.
    #[arg(long, global = true, env = "INNOSCOPE_Q_POLICY", value_parser = parse_policy)]
    q_policy: Option<SelectionPolicy>,
    #[arg(long, global = true, env = "INNOSCOPE_RESTARTS")]
    restarts: Option<usize>,
    #[arg(long, global = true, env = "INNOSCOPE_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    #[command(subcommand)]
    command: Command,
}

fn parse_policy(s: &str) -> Result<SelectionPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the scoreboard file.
    Ingest,
    /// Pairwise correlations with Holm-adjusted p-values.
    Correlate,
    /// Principal components and the number of axes to keep.
    Pca,
    /// Factorial k-means on the standardized indicators.
    Cluster,
    /// Rank clusters, flag pivots, compare with the scoreboard labels.
    Label,
    /// Train the membership classifier.
    Train,
    /// Kolmogorov-Smirnov comparison between scoreboard releases.
    Shift,
    /// All stages in one go.
    Pipeline,
    /// Score what-if trials for one region-year.
    Whatif {
        #[arg(long)]
        base: String,
        #[arg(long)]
        year: i32,
        /// `code=value,code=value`; repeat for several trials.
        #[arg(long = "trial")]
        trials: Vec<String>,
        /// Apply every trial to the base row instead of the previous trial.
        #[arg(long)]
        reset_each: bool,
        #[arg(long, default_value = "cli")]
        session: String,
        /// JSON trial log to continue and update.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Serve the bundle over HTTP.
    Serve {
        /// Directory for persisted what-if sessions.
        #[arg(long, env = "INNOSCOPE_SESSIONS")]
        sessions: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, Error> {
    let o = Overrides {
        input: cli.input,
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        k: cli.k,
        q_policy: cli.q_policy,
        restarts: cli.restarts,
    };
    let cfg = commands::resolve_config(&o)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Correlate => commands::correlate(&cfg),
        Command::Pca => commands::pca(&cfg),
        Command::Cluster => commands::cluster(&cfg),
        Command::Label => commands::label(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Shift => commands::shift(&cfg),
        Command::Pipeline => commands::run_all(&cfg),
        Command::Whatif { base, year, trials, reset_each, session, log } => {
            commands::whatif_cmd(&cfg, &WhatifArgs { base, year, trials, reset_each, session, log })
        }
        Command::Serve { sessions } => {
            let state = AppState::from_bundle(&cfg.out, sessions).map_err(|e| e.in_stage("serve"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(Arc::new(state), &cli.bind))?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let stage = match &e {
                Error::Stage { stage, .. } => *stage,
                _ => "cli",
            };
            eprintln!("error [{stage}/{}]: {e}", e.code());
            ExitCode::from(if e.code() == "argument" || e.code() == "range" { 2 } else { 1 })
        }
    }
}
