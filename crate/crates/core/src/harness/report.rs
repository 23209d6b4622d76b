//! Score tables, MI aggregates and sweep curves from finalised runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_jobs, RunOptions, RunRecord};
use super::stats::{ci95, mean, welch_t_test, WelchResult};
use super::HarnessError;
use crate::agents::{Algorithm, Coupling};
use crate::info::Metric;

/// Grouping key of a table row.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub axis_value: Option<String>,
    pub algorithm: Algorithm,
    pub coupling: Coupling,
    pub attachment: String,
}

impl CellKey {
    fn of(r: &RunRecord) -> Self {
        Self { axis_value: r.axis_value.clone(), algorithm: r.algorithm, coupling: r.coupling, attachment: r.attachment.clone() }
    }

    /// Coupled PPO without auxiliary objectives.
    pub fn is_baseline(&self) -> bool {
        self.algorithm == Algorithm::Ppo && self.coupling == Coupling::Coupled && self.attachment == "none"
    }

    fn baseline_for(&self) -> Self {
        Self { axis_value: self.axis_value.clone(), algorithm: Algorithm::Ppo, coupling: Coupling::Coupled, attachment: "none".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub key: CellKey,
    pub seeds: Vec<u64>,
    pub train_mean: f64,
    pub test_mean: Option<f64>,
    /// Means divided by the baseline mean of the same cell group; `None`
    /// without a baseline.
    pub train_norm: Option<f64>,
    pub test_norm: Option<f64>,
    /// 95% half-widths of the normalised (or raw, without a baseline) scores.
    pub train_ci: Option<f64>,
    pub test_ci: Option<f64>,
    /// Welch test of the normalised test scores (train scores when no test
    /// set exists) against the baseline.
    pub welch: Option<WelchResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

fn check_compatible(records: &[RunRecord]) -> Result<(), HarnessError> {
    let first = records.first().ok_or(HarnessError::Empty)?;
    for r in records {
        if r.env != first.env || r.budget != first.budget || r.train_levels != first.train_levels {
            return Err(HarnessError::Incompatible(format!(
                "{} ({:?}, budget {}, {} levels) vs {} ({:?}, budget {}, {} levels)",
                first.run_id, first.env, first.budget, first.train_levels, r.run_id, r.env, r.budget, r.train_levels
            )));
        }
    }
    Ok(())
}

fn group(records: &[RunRecord]) -> BTreeMap<CellKey, Vec<&RunRecord>> {
    let mut g: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        g.entry(CellKey::of(r)).or_default().push(r);
    }
    for v in g.values_mut() {
        v.sort_by_key(|r| r.seed);
    }
    g
}

fn test_scores(rs: &[&RunRecord]) -> Option<Vec<f64>> {
    rs.iter().map(|r| r.test_return).collect()
}

pub fn score_table(records: &[RunRecord]) -> Result<ScoreTable, HarnessError> {
    check_compatible(records)?;
    let groups = group(records);
    let mut rows = Vec::new();
    for (key, rs) in &groups {
        let train: Vec<f64> = rs.iter().map(|r| r.train_return).collect();
        let test = test_scores(rs);
        let base = groups.get(&key.baseline_for());
        let base_train = base.map(|b| mean(&b.iter().map(|r| r.train_return).collect::<Vec<_>>()));
        let base_test = base.and_then(|b| test_scores(b)).map(|t| mean(&t));
        let scale = |xs: &[f64], m: Option<f64>| -> Vec<f64> {
            match m {
                Some(m) if m != 0.0 => xs.iter().map(|x| x / m).collect(),
                _ => xs.to_vec(),
            }
        };
        let usable = |m: Option<f64>| m.filter(|m| *m != 0.0);
        let train_n = scale(&train, usable(base_train));
        let test_n = test.as_ref().map(|t| scale(t, usable(base_test)));
        let welch = base.and_then(|b| {
            let (mine, theirs) = match (&test_n, test_scores(b)) {
                (Some(t), Some(bt)) => (t.clone(), scale(&bt, usable(base_test))),
                _ => (train_n.clone(), scale(&b.iter().map(|r| r.train_return).collect::<Vec<_>>(), usable(base_train))),
            };
            welch_t_test(&mine, &theirs)
        });
        rows.push(ScoreRow {
            key: key.clone(),
            seeds: rs.iter().map(|r| r.seed).collect(),
            train_mean: mean(&train),
            test_mean: test.as_ref().map(|t| mean(t)),
            train_norm: usable(base_train).map(|_| mean(&train_n)),
            test_norm: usable(base_test).and(test_n.as_ref()).map(|t| mean(t)),
            train_ci: ci95(&train_n),
            test_ci: test_n.as_ref().and_then(|t| ci95(t)),
            welch,
        });
    }
    Ok(ScoreTable { rows })
}

fn opt(x: Option<f64>) -> String {
    x.map_or("NA".into(), |v| format!("{v:.4}"))
}

impl ScoreTable {
    pub fn row(&self, key: &CellKey) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| &r.key == key)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis_value,algorithm,coupling,attachment,n,train_mean,test_mean,train_norm,test_norm,train_ci95,test_ci95,welch_t,welch_dof,significant\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.key.axis_value.as_deref().unwrap_or(""),
                r.key.algorithm,
                r.key.coupling,
                r.key.attachment,
                r.seeds.len(),
                r.train_mean,
                r.test_mean.map_or("NA".into(), |v| v.to_string()),
                r.train_norm.map_or("NA".into(), |v| v.to_string()),
                r.test_norm.map_or("NA".into(), |v| v.to_string()),
                r.train_ci.map_or("NA".into(), |v| v.to_string()),
                r.test_ci.map_or("NA".into(), |v| v.to_string()),
                r.welch.map_or("NA".into(), |w| w.t.to_string()),
                r.welch.map_or("NA".into(), |w| w.dof.to_string()),
                r.welch.map_or("NA".into(), |w| w.significant.to_string()),
            );
        }
        s
    }

    /// Aligned text; `*` marks a significant difference from the baseline and
    /// `ci=NA` flags cells with a single seed.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let sig = if r.welch.is_some_and(|w| w.significant) { "*" } else { "" };
                vec![
                    r.key.axis_value.clone().unwrap_or_else(|| "-".into()),
                    r.key.algorithm.to_string(),
                    r.key.coupling.to_string(),
                    r.key.attachment.clone(),
                    r.seeds.len().to_string(),
                    format!("{} ±{}", opt(r.train_norm.or(Some(r.train_mean))), opt(r.train_ci)),
                    format!("{} ±{}{sig}", opt(r.test_norm.or(r.test_mean)), opt(r.test_ci)),
                    opt(Some(r.train_mean)),
                    opt(r.test_mean),
                ]
            })
            .collect();
        let header = ["axis", "algorithm", "coupling", "aux", "n", "train(norm)", "test(norm)", "train(raw)", "test(raw)"];
        let widths: Vec<usize> =
            (0..header.len()).map(|i| cells.iter().map(|c| c[i].chars().count()).chain([header[i].len()]).max().unwrap_or(0)).collect();
        let line = |v: Vec<&str>| -> String {
            v.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect::<Vec<_>>().join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(header.to_vec());
        for c in &cells {
            out += &line(c.iter().map(String::as_str).collect());
        }
        if self.rows.iter().any(|r| r.train_norm.is_none()) {
            out += "note: rows without a coupled PPO baseline in their group show raw scores\n";
        }
        if self.rows.iter().any(|r| r.seeds.len() < 2) {
            out += "note: ±NA marks cells with fewer than two seeds (CI undefined)\n";
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiAggregate {
    pub key: CellKey,
    pub representation: String,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    pub ci95: Option<f64>,
}

/// Mean and 95% half-width over seeds of every (cell, representation, metric).
pub fn mi_aggregates(records: &[RunRecord]) -> Vec<MiAggregate> {
    let mut acc: BTreeMap<(CellKey, String, Metric), Vec<f64>> = BTreeMap::new();
    for (key, rs) in group(records) {
        for r in rs {
            if let Some(rep) = &r.mi {
                for rec in &rep.records {
                    acc.entry((key.clone(), rec.representation.clone(), rec.metric)).or_default().push(rec.value());
                }
            }
        }
    }
    acc.into_iter()
        .map(|((key, representation, metric), xs)| MiAggregate { key, representation, metric, n: xs.len(), mean: mean(&xs), ci95: ci95(&xs) })
        .collect()
}

pub fn mi_csv(aggs: &[MiAggregate]) -> String {
    let mut s = String::from("axis_value,algorithm,coupling,attachment,representation,metric,n,mean,ci95\n");
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},\"{}\",{},{},{}",
            a.key.axis_value.as_deref().unwrap_or(""),
            a.key.algorithm,
            a.key.coupling,
            a.key.attachment,
            a.representation,
            a.metric.tag(),
            a.n,
            a.mean,
            a.ci95.map_or("NA".into(), |v| v.to_string())
        );
    }
    s
}

/// Per-run sweep rows: axis value, returns, aux batch size and the actor's
/// I(Z;L) and I(Z;V).
pub fn sweep_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("axis_value,algorithm,coupling,attachment,seed,train_return,test_return,aux_batch_size,actor_level_mi,actor_value_mi\n");
    let mut rs: Vec<&RunRecord> = records.iter().filter(|r| r.axis_value.is_some()).collect();
    rs.sort_by(|a, b| (CellKey::of(a), a.seed).cmp(&(CellKey::of(b), b.seed)));
    for r in rs {
        let mi = |m| r.mi.as_ref().and_then(|x| x.value("actor", m)).map_or("NA".into(), |v: f64| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.axis_value.as_deref().unwrap_or(""),
            r.algorithm,
            r.coupling,
            r.attachment,
            r.seed,
            r.train_return,
            r.test_return.map_or("NA".into(), |v| v.to_string()),
            r.aux_batch_sizes.first().map_or("NA".into(), |v| v.to_string()),
            mi(Metric::Level),
            mi(Metric::Value)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub scores_txt: PathBuf,
    pub scores_csv: PathBuf,
    pub mi_csv: PathBuf,
    pub sweep_csv: Option<PathBuf>,
}

/// Write the score table (text and CSV), the MI aggregates and, for sweeps,
/// the per-run sweep rows into `dir`.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<ReportFiles, HarnessError> {
    let table = score_table(records)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, text: String| -> Result<PathBuf, HarnessError> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
        Ok(p)
    };
    let sweep = records.iter().any(|r| r.axis_value.is_some());
    Ok(ReportFiles {
        scores_txt: write("scores.txt", table.to_text())?,
        scores_csv: write("scores.csv", table.to_csv())?,
        mi_csv: write("mi.csv", mi_csv(&mi_aggregates(records)))?,
        sweep_csv: if sweep { Some(write("sweep.csv", sweep_csv(records))?) } else { None },
    })
}

/// All runs of a sweep: one per (axis value, seed), plus coupled-PPO
/// baseline runs per axis value when requested and not already covered.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], opts: &RunOptions, workers: usize) -> Result<Vec<RunRecord>, HarnessError> {
    let spec = cfg.sweep.clone().ok_or_else(|| HarnessError::Config("config has no [sweep] section".into()))?;
    cfg.validate()?;
    let mut jobs = Vec::new();
    for v in &spec.values {
        let label = v.to_string();
        let mut cell = cfg.with_axis(spec.axis, v)?;
        cell.name = format!("{}-{}", cfg.name, label);
        let cell_opts = RunOptions { axis_value: Some(label.clone()), ..opts.clone() };
        let mut cells = vec![cell.clone()];
        if spec.include_baseline {
            let mut b = cell.clone();
            b.agent.algorithm = Algorithm::Ppo;
            b.agent.coupling = Coupling::Coupled;
            b.aux.clear();
            if b != cell {
                cells.push(b);
            }
        }
        for c in cells {
            for &s in seeds {
                jobs.push((c.clone(), s, cell_opts.clone()));
            }
        }
    }
    run_jobs(&jobs, workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::EnvKind;
    use crate::harness::config::{SweepAxis, SweepSection, SweepValue};
    use crate::harness::run::tests::tiny;

    fn rec(algorithm: Algorithm, coupling: Coupling, seed: u64, train: f64, test: f64) -> RunRecord {
        RunRecord {
            run_id: format!("{algorithm}-{coupling}-{seed}"),
            name: "t".into(),
            config_digest: String::new(),
            env: EnvKind::Assembly,
            algorithm,
            coupling,
            attachment: "none".into(),
            axis_value: None,
            seed,
            budget: 100,
            steps: 100,
            train_levels: 4,
            train_return: train,
            test_return: Some(test),
            aux_batch_sizes: vec![],
            mi: None,
            mi_error: None,
            bound: None,
            wall_clock_secs: 0.0,
            started_unix: 0,
        }
    }

    #[test]
    fn baseline_normalises_to_one() {
        let mut rs = Vec::new();
        for s in 0..5 {
            rs.push(rec(Algorithm::Ppo, Coupling::Coupled, s, 2.0 + s as f64 * 0.1, 1.0 + s as f64 * 0.1));
            rs.push(rec(Algorithm::Ppo, Coupling::Decoupled, s, 4.0 + s as f64 * 0.1, 3.0));
        }
        let t = score_table(&rs).unwrap();
        let base = t.rows.iter().find(|r| r.key.is_baseline()).unwrap();
        assert!((base.train_norm.unwrap() - 1.0).abs() < 1e-12 && (base.test_norm.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(base.welch.unwrap().t, 0.0);
        let dec = t.rows.iter().find(|r| !r.key.is_baseline()).unwrap();
        assert!((dec.test_norm.unwrap() - 2.5).abs() < 1e-12);
        assert!(dec.welch.unwrap().significant);
        // Normalised baseline test scores are 1 + k·0.1/1.2 for k = 0..4.
        let xs: Vec<f64> = (0..5).map(|k| (1.0 + k as f64 * 0.1) / 1.2).collect();
        let m = xs.iter().sum::<f64>() / 5.0;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((base.test_ci.unwrap() - 1.96 * sd / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_run_and_errors() {
        let t = score_table(&[rec(Algorithm::Ppg, Coupling::Decoupled, 0, 1.0, 1.0)]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].train_ci.is_none() && t.rows[0].train_norm.is_none());
        assert!(t.to_text().contains("CI undefined"));
        assert!(matches!(score_table(&[]), Err(HarnessError::Empty)));
        let mut other = rec(Algorithm::Ppo, Coupling::Coupled, 1, 1.0, 1.0);
        other.budget = 7;
        assert!(matches!(score_table(&[rec(Algorithm::Ppo, Coupling::Coupled, 0, 1.0, 1.0), other]), Err(HarnessError::Incompatible(_))));
    }

    #[test]
    fn emitted_files_are_independent_of_record_order() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rs: Vec<RunRecord> = (0..3).map(|s| rec(Algorithm::Ppo, Coupling::Coupled, s, 1.0 + s as f64, 1.0)).collect();
        let a = emit_report(&rs, &tmp.path().join("a")).unwrap();
        rs.reverse();
        let b = emit_report(&rs, &tmp.path().join("b")).unwrap();
        for (x, y) in [(a.scores_csv, b.scores_csv), (a.scores_txt, b.scores_txt), (a.mi_csv, b.mi_csv)] {
            assert_eq!(fs::read_to_string(x).unwrap(), fs::read_to_string(y).unwrap());
        }
        assert!(a.sweep_csv.is_none());
    }

    #[test]
    fn width_sweep_grid() {
        let mut c = tiny("w");
        c.analysis.enabled = false;
        c.agent.budget = 64;
        c.train.eval_interval = 1;
        c.sweep = Some(SweepSection {
            axis: SweepAxis::ModelWidth,
            values: vec![SweepValue::Number(0.5), SweepValue::Number(1.0), SweepValue::Number(2.0)],
            include_baseline: true,
        });
        let rs = sweep(&c, &[0, 1, 2], &RunOptions::default(), 1).unwrap();
        // The swept config is already the baseline, so no extra runs.
        assert_eq!(rs.len(), 9);
        let t = score_table(&rs).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.iter().all(|r| (r.train_norm.unwrap() - 1.0).abs() < 1e-12));
    }
}
