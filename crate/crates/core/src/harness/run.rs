//! Single runs, seed fan-out and run directories.
//!
//! Layout of one run directory:
//! ```text
//! <run_id>/config.toml          canonical config
//! <run_id>/checkpoints/*.ckpt   parameter checkpoints by step
//! <run_id>/logs/metrics.jsonl   one training log record per line
//! <run_id>/reports/mi.csv       final MI report
//! <run_id>/reports/bound.json   final bound report
//! <run_id>/run.json             the finalised RunRecord
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::agents::{train, ActorCritic, Algorithm, Coupling, TrainRequest};
use crate::cmdp::EnvKind;
use crate::info::{collect_analysis_batch, compute_metric_suite, representation_latents, Metric, MiReport};
use crate::nn::checkpoint::Checkpoint;
use crate::seed::{SeedStreams, Stream};
use crate::theory::BoundReport;

/// Environment variable holding the worker count for seed fan-out.
pub const WORKERS_ENV: &str = "ACLAB_WORKERS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub name: String,
    pub config_digest: String,
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub coupling: Coupling,
    pub attachment: String,
    /// Sweep cell this run belongs to, if any.
    pub axis_value: Option<String>,
    pub seed: u64,
    pub budget: u64,
    pub steps: u64,
    pub train_levels: usize,
    pub train_return: f64,
    pub test_return: Option<f64>,
    pub aux_batch_sizes: Vec<usize>,
    pub mi: Option<MiReport>,
    /// Why `mi` is missing when analysis was enabled.
    pub mi_error: Option<String>,
    pub bound: Option<BoundReport>,
    pub wall_clock_secs: f64,
    pub started_unix: u64,
}

impl RunRecord {
    /// Equality of everything except wall-clock metadata.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| RunRecord { wall_clock_secs: 0.0, started_unix: 0, ..r.clone() };
        strip(self) == strip(other)
    }

    /// I(Z_A;L) of the final report.
    pub fn actor_level_mi(&self) -> Option<f64> {
        self.mi.as_ref()?.value("actor", Metric::Level)
    }
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}-{}-{}-s{seed}", cfg.name, cfg.agent.algorithm, cfg.agent.coupling)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Parent of the run directory; `None` keeps everything in memory.
    pub out: Option<PathBuf>,
    /// Replace an existing run directory instead of failing.
    pub overwrite: bool,
    pub axis_value: Option<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), HarnessError> {
    if dir.exists() {
        if !overwrite {
            return Err(HarnessError::Exists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    for sub in ["checkpoints", "logs", "reports"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

/// MI suite of a model on a fresh analysis batch drawn from the training levels.
pub fn measure(cfg: &ExperimentConfig, model: &ActorCritic, seed: u64) -> Result<MiReport, HarnessError> {
    let env = cfg.env.environment();
    let (train_levels, _) = cfg.env.level_sets()?;
    let streams = SeedStreams::new(seed);
    let mut rng = streams.rng(Stream::Analysis);
    let sample = collect_analysis_batch(model, &env, &train_levels, &cfg.analysis.collection(), &mut rng)?;
    let latents = representation_latents(model, &sample)?;
    let jitter_seed: u64 = streams.rng(Stream::Jitter).random();
    Ok(compute_metric_suite(&sample, &latents, &cfg.analysis.estimator(jitter_seed))?)
}

/// Train, measure and (optionally) persist one (config, seed) cell.
pub fn run_one(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let id = run_id(cfg, seed);
    let dir = opts.out.as_ref().map(|o| o.join(&id));
    if let Some(d) = &dir {
        prepare_dir(d, opts.overwrite)?;
        write_file(&d.join("config.toml"), cfg.to_toml().as_bytes())?;
    }
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let env = cfg.env.environment();
    let (train_levels, test_levels) = cfg.env.level_sets()?;
    let out = train(TrainRequest {
        algorithm: cfg.agent.algorithm,
        coupling: cfg.agent.coupling,
        config: &cfg.train,
        attachments: &cfg.aux,
        env: &env,
        train_levels: &train_levels,
        test_levels: &test_levels,
        budget: cfg.agent.budget,
        seed,
    })?;
    let last = out.final_record().ok_or_else(|| HarnessError::Config("budget is smaller than one rollout".into()))?;
    let (train_return, test_return) = (last.train_return, last.test_return);

    let (mi, mi_error) = if cfg.analysis.enabled {
        match measure(cfg, &out.model, seed) {
            Ok(r) => (Some(r), None),
            Err(HarnessError::Info(e)) => {
                log::warn!("{id}: MI analysis skipped: {e}");
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    let bound = match (&mi, test_return) {
        (Some(r), Some(test)) => r
            .value("actor", Metric::Level)
            .map(|i| BoundReport::new(train_return, test, i, env.reward_bound(), train_levels.len())),
        _ => None,
    };

    let record = RunRecord {
        run_id: id,
        name: cfg.name.clone(),
        config_digest: cfg.digest(),
        env: cfg.env.kind,
        algorithm: cfg.agent.algorithm,
        coupling: cfg.agent.coupling,
        attachment: cfg.attachment_label(),
        axis_value: opts.axis_value.clone(),
        seed,
        budget: cfg.agent.budget,
        steps: out.steps,
        train_levels: train_levels.len(),
        train_return,
        test_return,
        aux_batch_sizes: out.aux_batch_sizes.clone(),
        mi,
        mi_error,
        bound,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        started_unix,
    };

    if let Some(d) = &dir {
        for (step, ck) in &out.checkpoints {
            let p = d.join("checkpoints").join(format!("step-{step:010}.ckpt"));
            ck.save(&p)?;
        }
        let log_path = d.join("logs").join("metrics.jsonl");
        let mut f = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        for rec in &out.log {
            let line = serde_json::to_string(rec).map_err(|e| io_err(&log_path, e))?;
            writeln!(f, "{line}").map_err(|e| io_err(&log_path, e))?;
        }
        if let Some(r) = &record.mi {
            write_file(&d.join("reports").join("mi.csv"), r.to_csv().as_bytes())?;
        }
        if let Some(b) = &record.bound {
            write_file(&d.join("reports").join("bound.json"), serde_json::to_string_pretty(b).expect("plain data").as_bytes())?;
        }
        write_file(&d.join("run.json"), serde_json::to_string_pretty(&record).expect("plain data").as_bytes())?;
    }
    Ok(record)
}

/// Worker count from [`WORKERS_ENV`], at least 1.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(1)
}

/// One run per (config, seed) job on up to `workers` threads. Results come
/// back in job order whatever the completion order.
pub fn run_jobs(jobs: &[(ExperimentConfig, u64, RunOptions)], workers: usize) -> Result<Vec<RunRecord>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    use rayon::prelude::*;
    pool.install(|| jobs.par_iter().map(|(c, s, o)| run_one(c, *s, o)).collect())
}

pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], opts: &RunOptions, workers: usize) -> Result<Vec<RunRecord>, HarnessError> {
    let jobs: Vec<_> = seeds.iter().map(|&s| (cfg.clone(), s, opts.clone())).collect();
    run_jobs(&jobs, workers)
}

/// Seeds as `a..b` (inclusive), `a,b,c` or a single integer.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("cannot parse seeds `{s}`; use `0..4`, `1,3,5` or `7`"));
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().trim_start_matches('=').parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn load_run(dir: &Path) -> Result<RunRecord, HarnessError> {
    let p = dir.join("run.json");
    let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&p, e))
}

/// Every finalised run directly under `root`, sorted by run id.
pub fn load_runs(root: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let path = entry.map_err(|e| io_err(root, e))?.path();
        if path.join("run.json").is_file() {
            out.push(load_run(&path)?);
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

/// Latest checkpoint of a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf, HarnessError> {
    let dir = run_dir.join("checkpoints");
    let mut cks: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    cks.sort();
    cks.pop().ok_or_else(|| HarnessError::Io(format!("{}: no checkpoints", dir.display())))
}

pub fn load_model(path: &Path) -> Result<ActorCritic, HarnessError> {
    Ok(ActorCritic::from_checkpoint(&Checkpoint::load(path)?)?)
}
