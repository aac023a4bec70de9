use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dppseq::{io, pipeline, CliError, CliResult, ExperimentConfig, Overrides};
use dppseq_core::losses::LossKind;
use dppseq_core::synth::{synthetic_interactions, SyntheticConfig};

#[derive(Parser)]
#[command(
    name = "dppseq",
    version,
    about = "DPP set-likelihood losses for sequential recommendation"
)]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation. One thread is the reference mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (a file path for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, k-core filter, split and window the dataset.
    Prepare,
    /// Generate paired diverse item sets from the training split.
    GenSets,
    /// Learn and normalize the diversity kernel.
    TrainKernel,
    /// Train the scorer with one loss.
    Train {
        #[arg(long)]
        loss: LossKind,
    },
    /// Evaluate a trained scorer on the test split.
    Evaluate {
        #[arg(long)]
        loss: LossKind,
        /// Scorer checkpoint; defaults to the one `train` wrote.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Combine metric tables, validation curves and training times.
    Report,
    /// Every stage for every configured loss.
    Run,
    /// Write a synthetic interaction CSV with planted category preferences.
    Synth {
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        categories: usize,
        #[arg(long, default_value_t = 25)]
        min_len: usize,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
}

fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut o = match &cli.config {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        Overrides::parse(kv)?;
        o.set(k.trim(), v.trim());
    }
    if let Some(s) = cli.seed {
        o.set("seed", s.to_string());
    }
    if let Some(t) = cli.threads {
        o.set("threads", t.to_string());
    }
    if let Some(d) = &cli.out {
        o.set("out", d.display().to_string());
    }
    ExperimentConfig::resolve(&o)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Synth {
        users,
        items,
        categories,
        min_len,
        max_len,
    } = cli.command
    {
        let out = cli
            .out
            .clone()
            .ok_or_else(|| CliError::Usage("synth needs --out <file>".into()))?;
        let cfg = SyntheticConfig {
            users,
            items,
            categories,
            min_len,
            max_len,
            seed: cli.seed.unwrap_or(0),
            ..Default::default()
        };
        let rows = synthetic_interactions(&cfg)?;
        let stamp = format!(
            "# synthetic users={users} items={items} categories={categories} seed={}\n",
            cfg.seed
        );
        return io::write_text(&out, &io::format_interactions(&stamp, &rows)?);
    }
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Prepare => {
            let s = pipeline::prepare(&cfg)?;
            println!(
                "users {} items {} categories {} instances {} dropped {} malformed {}",
                s.users, s.items, s.categories, s.instances, s.dropped_users, s.malformed_lines
            );
        }
        Command::GenSets => {
            let pairs = pipeline::gen_sets(&cfg)?;
            println!("{} set pairs", pairs.len());
        }
        Command::TrainKernel => {
            let (_, log) = pipeline::train_kernel(&cfg)?;
            if let Some(last) = log.last() {
                println!(
                    "kernel objective {} after {} epochs",
                    last.objective, last.epoch
                );
            }
        }
        Command::Train { loss } => {
            let o = pipeline::train(&cfg, loss)?;
            println!(
                "{loss}: best validation Nd@5 {:.5} at epoch {}",
                o.best_val_ndcg, o.best_epoch
            );
        }
        Command::Evaluate { loss, checkpoint } => {
            let rows = pipeline::evaluate(&cfg, loss, checkpoint.as_deref())?;
            print!("{}", io::format_metrics("", &rows));
        }
        Command::Report => {
            let rows = pipeline::report(&cfg)?;
            print!("{}", io::format_metrics("", &rows));
        }
        Command::Run => {
            let rows = pipeline::run_all(&cfg)?;
            print!("{}", io::format_metrics("", &rows));
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
