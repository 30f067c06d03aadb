use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rssid_cli::{cmd_bench, cmd_compare_edmd, cmd_generate, cmd_identify, describe, load_config, prepare_run_dir};

#[derive(Parser)]
#[command(name = "rssid", version, about = "Streaming Koopman identification with novelty-gated recursive SSID")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the record stream and write it to <run>/data
    Generate(Common),
    /// Stream records through the gate, finalize and fit the GP lifter
    Identify(WithData),
    /// RMSE of the identified model(s) on the test ensemble
    Bench(Common),
    /// RMSE of the final model against EDMD baselines
    CompareEdmd(WithData),
}

#[derive(Args)]
struct Common {
    /// Flat TOML configuration file (overrides --preset)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: example1, duffing or duffing-small
    #[arg(long, default_value = "example1")]
    preset: String,
    /// Root directory for run directories
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for generation and benchmarks
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct WithData {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (defaults to <run>/data, generated if missing)
    #[arg(long)]
    data: Option<PathBuf>,
}

fn run(cli: Cli) -> koopman_rssid::Result<()> {
    let (common, data) = match &cli.command {
        Command::Generate(c) | Command::Bench(c) => (c, None),
        Command::Identify(w) | Command::CompareEdmd(w) => (&w.common, w.data.as_deref()),
    };
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| koopman_rssid::Error::InvalidConfig(e.to_string()))?;
    }
    let cfg = load_config(Some(&common.preset), common.config.as_deref(), common.seed)?;
    let dir = prepare_run_dir(&common.out, &cfg)?;
    println!("run directory {}", dir.display());
    match cli.command {
        Command::Generate(_) => {
            let m = cmd_generate(&cfg, &dir)?;
            println!("wrote {} records", m.count);
        }
        Command::Identify(_) => {
            let o = cmd_identify(&cfg, &dir, data)?;
            for (id, e) in &o.errors {
                eprintln!("record {id} skipped: {e}");
            }
            println!("streamed {}, accepted {}, order {}", o.streamed, o.accepted, o.order);
            if let Some(r) = o.snapshot_order {
                println!("order after {} records: {r}", cfg.snapshot_at);
            }
        }
        Command::Bench(_) => println!("{}", describe(&cmd_bench(&cfg, &dir)?)),
        Command::CompareEdmd(_) => println!("{}", describe(&cmd_compare_edmd(&cfg, &dir, data)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
