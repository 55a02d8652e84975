mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::GlobalConfig;

/// Streaming multi-interest retrieval: ingest, update, retrieve, evaluate.
#[derive(Debug, Parser)]
#[command(name = "unitrec", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    paths: PathArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the `[paths]` section.
#[derive(Debug, Args)]
struct PathArgs {
    /// Corpus JSON-lines file.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Click-log JSON-lines file.
    #[arg(long, global = true)]
    clicks: Option<PathBuf>,
    /// Stopword list, one term per line.
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    /// Profile snapshot file.
    #[arg(long, global = true)]
    snapshots: Option<PathBuf>,
    /// Persisted index file.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Precomputed document vectors.
    #[arg(long, global = true)]
    vectors: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and persist the document index; print corpus statistics.
    Ingest,
    /// Replay a click log into the profile snapshots.
    Update,
    /// Print a user's top-k documents as JSON lines.
    Retrieve {
        #[arg(long)]
        user: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Evaluate one system with sampled HR/NDCG.
    Eval {
        /// ira, ira-alt-embedder, itempop, random or oracle.
        #[arg(long)]
        system: String,
        /// Held-out period log; without it the last clicks of each user are held out.
        #[arg(long)]
        test_clicks: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an ablation study on simulated data.
    Study {
        /// unit-cap, adaptability, pruning, text-ablation or unit-growth.
        name: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write a simulated corpus, click logs and ground truth.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn effective_config(cli: &Cli) -> Result<GlobalConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => GlobalConfig::load(p).map_err(Failure::Config)?,
        None => GlobalConfig::default(),
    };
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    let p = &cli.paths;
    let paths = &mut cfg.paths;
    for (flag, slot) in [
        (&p.corpus, &mut paths.corpus),
        (&p.clicks, &mut paths.clicks),
        (&p.stopwords, &mut paths.stopwords),
        (&p.snapshots, &mut paths.snapshots),
        (&p.index, &mut paths.index),
        (&p.vectors, &mut paths.vectors),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Update => commands::update(&cfg),
        Command::Retrieve { user, k } => commands::retrieve(&cfg, &user, k),
        Command::Eval {
            system,
            test_clicks,
            output,
        } => commands::eval(&cfg, &system, test_clicks.as_deref(), output.as_deref()),
        Command::Study { name, out_dir } => commands::study(&cfg, &name, &out_dir),
        Command::Simulate { out_dir } => commands::simulate(&cfg, &out_dir),
        Command::Config => commands::emit(&cfg.to_toml()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
