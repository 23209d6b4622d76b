use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aclab::cmdp::{EnvKind, Environment};
use aclab::harness::{self, ExperimentConfig, RunOptions};
use aclab::theory::verify_assembly;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aclab", version, about = "Train, measure and verify coupled and decoupled actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write run directories.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (inclusive), `a,b,c` or a single seed.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Parallel runs; defaults to $ACLAB_WORKERS or 1.
        #[arg(long)]
        workers: Option<usize>,
        /// Replace existing run directories.
        #[arg(long)]
        force: bool,
    },
    /// Estimate the MI suite of a checkpoint.
    Measure {
        /// Run directory; its config and latest checkpoint are used unless overridden.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the exact-enumeration checks.
    Verify {
        #[arg(long, default_value = "assembly")]
        env: String,
        #[arg(long, default_value_t = 20)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the [sweep] grid of a config and emit its report.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0..2")]
        seeds: String,
        #[arg(long, default_value = "sweeps")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Aggregate finalised runs into score and MI tables.
    Report {
        /// Directory containing run directories.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory; defaults to <runs>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default config with every key filled in.
    DefaultConfig,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn workers(w: Option<usize>) -> usize {
    w.filter(|&n| n > 0).unwrap_or_else(harness::workers_from_env)
}

fn print_runs(records: &[harness::RunRecord]) {
    for r in records {
        let test = r.test_return.map_or("NA".into(), |t| format!("{t:.4}"));
        let mi = r.actor_level_mi().map_or("NA".into(), |i| format!("{i:.4}"));
        let bound = r.bound.map_or("NA".into(), |b| format!("{} (gap {:.4} vs {:.4})", if b.holds { "holds" } else { "VIOLATED" }, b.gap, b.slack_bound));
        println!("{}  train {:.4}  test {test}  I(Z_A;L) {mi}  bound {bound}  {:.1}s", r.run_id, r.train_return, r.wall_clock_secs);
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seeds, out, workers: w, force } => {
            let cfg = load_config(&config)?;
            let seeds = harness::parse_seeds(&seeds)?;
            let opts = RunOptions { out: Some(out.clone()), overwrite: force, axis_value: None };
            let records = harness::run_seeds(&cfg, &seeds, &opts, workers(w))?;
            print_runs(&records);
            println!("{} run(s) written under {}", records.len(), out.display());
        }
        Command::Measure { run, config, checkpoint, seed, out } => {
            let cfg = match (&config, &run) {
                (Some(c), _) => load_config(c)?,
                (None, Some(r)) => load_config(&r.join("config.toml"))?,
                (None, None) => bail!("measure needs --config or --run"),
            };
            let ck = match (&checkpoint, &run) {
                (Some(c), _) => c.clone(),
                (None, Some(r)) => harness::run::latest_checkpoint(r)?,
                (None, None) => bail!("measure needs --checkpoint or --run"),
            };
            if !ck.is_file() {
                bail!("checkpoint {} does not exist", ck.display());
            }
            let model = harness::load_model(&ck).with_context(|| format!("loading {}", ck.display()))?;
            let report = harness::measure(&cfg, &model, seed)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(p) => fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Verify { env, levels, seed, json } => {
            let kind: EnvKind = env.parse()?;
            let report = verify_assembly(&Environment::default_for(kind), levels, seed)?;
            print!("{}", report.to_text());
            if let Some(p) = json {
                fs::write(&p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
            }
            return Ok(report.all_passed());
        }
        Command::Sweep { config, seeds, out, workers: w, force } => {
            let cfg = load_config(&config)?;
            let seeds = harness::parse_seeds(&seeds)?;
            let opts = RunOptions { out: Some(out.clone()), overwrite: force, axis_value: None };
            let records = harness::sweep(&cfg, &seeds, &opts, workers(w))?;
            print_runs(&records);
            let files = harness::emit_report(&records, &out.join("report"))?;
            print!("{}", fs::read_to_string(&files.scores_txt)?);
            println!("report written to {}", out.join("report").display());
        }
        Command::Report { runs, out } => {
            let records = harness::load_runs(&runs)?;
            let dir = out.unwrap_or_else(|| runs.join("report"));
            let files = harness::emit_report(&records, &dir)?;
            print!("{}", fs::read_to_string(&files.scores_txt)?);
            println!("report written to {}", dir.display());
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
