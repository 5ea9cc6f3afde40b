use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rote::cli;
use rote::config::RunConfig;
use rote::data::{synth_seasonal, SynthConfig};
use rote::profile::efficiency_tsv;
use rote::{selftest, Error, Result};

/// Sequential recommendation with multi-level rotary time embeddings.
#[derive(Parser, Debug)]
#[command(name = "rote", version)]
struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// positional, timestamp, y, y+m or y+m+d.
    #[arg(long, global = true, value_name = "NAME")]
    mode: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Processed dataset directory.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long = "max-len", global = true, value_name = "N")]
    max_len: Option<usize>,
    #[arg(long = "k-core", global = true, value_name = "N")]
    k_core: Option<usize>,
    /// Any other config key, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter and index a raw `user<TAB>item<TAB>unix_seconds` log.
    Prepare {
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Train one model and save the best checkpoint.
    Train,
    /// Score a checkpoint on the validation or test split.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "valid|test")]
        split: Option<String>,
    },
    /// Train every mode for every seed and tabulate test R@10 and N@10.
    Ablate {
        #[arg(long, value_name = "LIST")]
        modes: Option<String>,
        #[arg(long, value_name = "LIST")]
        seeds: Option<String>,
    },
    /// Parameter counts, analytic FLOPs and forward latency per mode.
    Profile {
        #[arg(long, value_name = "LIST")]
        modes: Option<String>,
        /// Skip the latency measurement.
        #[arg(long)]
        no_latency: bool,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Write a synthetic seasonal interaction log.
    Synth {
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 600)]
        items: usize,
        #[arg(long = "p-short", value_name = "P")]
        p_short: Option<f64>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("seed", cli.seed.map(|s| s.to_string()));
    flag("mode", cli.mode.clone());
    flag("out", cli.out.as_ref().map(|p| p.display().to_string()));
    flag("data", cli.data.as_ref().map(|p| p.display().to_string()));
    flag("max_len", cli.max_len.map(|n| n.to_string()));
    flag("k_core", cli.k_core.map(|n| n.to_string()));
    match &cli.command {
        Command::Prepare { input } => flag("input", input.as_ref().map(|p| p.display().to_string())),
        Command::Eval { split, .. } => flag("split", split.clone()),
        Command::Ablate { modes, seeds } => {
            flag("modes", modes.clone());
            flag("seeds", seeds.clone());
        }
        Command::Profile { modes, .. } => flag("modes", modes.clone()),
        _ => {}
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        flags.push((k.trim().to_string(), v.to_string()));
    }
    for (k, v) in flags {
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Prepare { .. } => {
            let stats = cli::cmd_prepare(&cfg)?;
            print!("{}", stats.to_tsv());
        }
        Command::Train => {
            let run = cli::cmd_train(&cfg)?;
            eprintln!("best epoch {}", run.report.best_epoch);
            print!("{}", cli::metrics_tsv(&[&run.valid, &run.test]));
        }
        Command::Eval { checkpoint, .. } => {
            let m = cli::cmd_eval(&cfg, checkpoint.as_deref())?;
            print!("{}", m.to_tsv());
        }
        Command::Ablate { .. } => {
            let rows = cli::cmd_ablate(&cfg)?;
            print!("{}", cli::ablation_tsv(&rows));
        }
        Command::Profile { no_latency, .. } => {
            let rows = cli::cmd_profile(&cfg, !no_latency)?;
            print!("{}", efficiency_tsv(&rows));
        }
        Command::Selftest => {
            let checks = selftest::run();
            print!("{}", selftest::report(&checks));
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Synth { users, items, p_short } => {
            let defaults = SynthConfig::default();
            let sc = SynthConfig {
                n_users: *users,
                n_items: *items,
                seed: cfg.seed,
                p_short: p_short.unwrap_or(defaults.p_short),
                ..defaults
            };
            let data = synth_seasonal(&sc)?;
            data.write_dir(&cfg.out)?;
            eprintln!("wrote {} interactions to {}", data.interactions.len(), cfg.out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
