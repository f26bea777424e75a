//! `gridzero` command line. Every subcommand takes `--grid`, `--chronics`,
//! `--out` and an optional TOML `--config`; flags override the file.
//! Failures print `{"error": {"category", "message"}}` on stderr and exit
//! with the code of that category.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridzero::bench::{cmd_evaluate, cmd_reduce_actions, cmd_train, load_toml, prepare_serve, BenchError, EvalConfig, ReduceJob, ServeJob, TrainJob};

#[derive(Parser)]
#[command(name = "gridzero", version, about = "Grid congestion agents: evaluate, train, reduce actions, serve")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Grid description (JSON).
    #[arg(long)]
    grid: PathBuf,
    /// Directory of scenario CSV files.
    #[arg(long)]
    chronics: PathBuf,
    /// TOML job configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the agent lineup over every scenario and seed; writes report.csv,
    /// episodes.csv and report.txt into --out.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated agent labels.
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<String>>,
        #[arg(long)]
        reduced_set: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Behavioural cloning of the policy prior; checkpoints and metrics go to --out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reduced_set: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy pilot over the suite; writes the top-K action set to --out.
    ReduceActions {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve operator sessions over HTTP; session event logs go to --out.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Base seed mixed into every recommendation search.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reduced_set: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// Error category and exit code.
struct Failure {
    category: &'static str,
    message: String,
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure { category: e.category(), message: e.to_string() }
    }
}

impl From<gridzero_server::ServeError> for Failure {
    fn from(e: gridzero_server::ServeError) -> Self {
        Failure { category: e.category(), message: e.to_string() }
    }
}

fn exit_code(category: &str) -> u8 {
    match category {
        "usage" => 2,
        "config" => 3,
        "missing_artifact" => 4,
        "artifact_mismatch" => 5,
        "artifact" => 6,
        "chronics" => 7,
        "grid" => 8,
        "report" => 9,
        "io" => 10,
        "port_busy" => 11,
        "bind" => 12,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Evaluate { common, seeds, agents, reduced_set, policy, out } => {
            let mut cfg: EvalConfig = load_toml(common.config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(a) = agents {
                cfg.agents = a;
            }
            cfg.reduced_set = reduced_set.or(cfg.reduced_set);
            cfg.policy = policy.or(cfg.policy);
            let report = cmd_evaluate(&common.grid, &common.chronics, &cfg, &out)?;
            print!("{}", report.to_table());
        }
        Cmd::Train { common, seed, reduced_set, out } => {
            let mut job: TrainJob = load_toml(common.config.as_deref())?;
            if let Some(s) = seed {
                job.train.seed = s;
            }
            job.reduced_set = reduced_set.or(job.reduced_set);
            let run = cmd_train(&common.grid, &common.chronics, &job, &out)?;
            println!("trained {} epochs, {} checkpoints in {}", job.train.epochs, run.checkpoints.len(), out.display());
        }
        Cmd::ReduceActions { common, seeds, k, out } => {
            let mut job: ReduceJob = load_toml(common.config.as_deref())?;
            if let Some(s) = seeds {
                job.reduce.seeds = s;
            }
            if let Some(k) = k {
                job.reduce.k = k;
            }
            let set = cmd_reduce_actions(&common.grid, &common.chronics, &job, &out)?;
            println!("kept {} actions in {}", set.len(), out.display());
        }
        Cmd::Serve { common, seed, reduced_set, policy, out, addr } => {
            let mut job: ServeJob = load_toml(common.config.as_deref())?;
            if let Some(s) = seed {
                job.assist.search.seed = s;
            }
            job.reduced_set = reduced_set.or(job.reduced_set);
            job.policy = policy.or(job.policy);
            job.assist.log_dir = out.or(job.assist.log_dir);
            let manager = prepare_serve(&common.grid, &common.chronics, &job)?;
            gridzero_server::run(manager, addr, |local| {
                println!("listening on http://{local}");
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            // help and version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => Err(Failure { category: "usage", message: e.to_string() }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": { "category": f.category, "message": f.message } });
            eprintln!("{body}");
            ExitCode::from(exit_code(f.category))
        }
    }
}
