//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedaccess_core::data::Dataset;
use fedaccess_core::sim::{run_experiment_with, ExperimentReport, Progress, Strategy};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::output::{self, PartialMetrics, FAIRNESS_HEADER, SUMMARY_HEADER};

/// Where a command reads its configuration from and writes its results to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: usize,
}

impl RunSpec {
    pub fn load_config(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub dir: PathBuf,
}

pub fn run_dir(out: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    out.join(strategy.id()).join(format!("seed-{seed}"))
}

/// Validates a configuration including dataset paths; returns the resolved
/// TOML.
pub fn validate_config(spec: &RunSpec) -> Result<String> {
    let config = spec.load_config()?;
    config.dataset_spec()?.check()?;
    Ok(config.to_toml())
}

fn load_data(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let spec = config.dataset_spec()?;
    spec.check()?;
    spec.load()
}

fn run_one(config: &RunConfig, strategy: Strategy, seed: u64, train: &Dataset, test: &Dataset, out: &Path) -> Result<RunSummary> {
    let dir = run_dir(out, strategy, seed);
    let exp = config.experiment(seed)?;
    let metrics_path = dir.join("metrics.csv");
    let mut partial = PartialMetrics::create(&metrics_path)?;
    let mut flush_error = None;
    let report: ExperimentReport = run_experiment_with(&exp, strategy, train, test, |p| {
        if let Progress::Evaluated(row) = p {
            if let Err(e) = partial.push(row) {
                flush_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = flush_error {
        return Err(e);
    }
    output::write_csv(&metrics_path, &output::metrics_csv(&report.metrics))?;
    output::write_csv(&dir.join("winners.csv"), &output::winners_csv(&report.winners))?;
    checkpoint::save(&report.final_model, &dir.join("model.famd"))?;
    partial.finish()?;
    Ok(RunSummary {
        strategy,
        seed,
        final_accuracy: report.final_accuracy(),
        best_accuracy: report.best_accuracy(),
        dir,
    })
}

/// Every (strategy, seed) pair of `config`, at most `jobs` at a time.
fn run_grid(config: &RunConfig, train: &Dataset, test: &Dataset, out: &Path, jobs: usize) -> Result<Vec<RunSummary>> {
    let strategies = config.strategies()?;
    let grid: Vec<(Strategy, u64)> =
        strategies.iter().flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| grid.par_iter().map(|&(s, seed)| run_one(config, s, seed, train, test, out)).collect())
}

fn write_resolved(config: &RunConfig, dir: &Path) -> Result<()> {
    output::write_csv(&dir.join(RESOLVED_CONFIG), config.to_toml().as_bytes())
}

pub fn cmd_run(spec: &RunSpec) -> Result<Vec<RunSummary>> {
    let config = spec.load_config()?;
    let (train, test) = load_data(&config)?;
    write_resolved(&config, &spec.out)?;
    run_grid(&config, &train, &test, &spec.out, spec.jobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    CwBase,
    Threshold,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CwBase => "cw_base",
            SweepAxis::Threshold => "threshold",
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepAxis::CwBase => "mac.cw_base",
            SweepAxis::Threshold => "threshold",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw_base" | "N" => Ok(SweepAxis::CwBase),
            "threshold" => Ok(SweepAxis::Threshold),
            other => Err(Error::Config(format!("unknown sweep axis {other:?} (expected cw_base or threshold)"))),
        }
    }
}

/// One row of the sweep summary: accuracies averaged over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub strategy: Strategy,
    pub replicates: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

pub fn cmd_sweep(spec: &RunSpec, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<(String, RunConfig)> = values
        .iter()
        .map(|v| {
            let mut overrides = spec.overrides.clone();
            overrides.push(format!("{}={}", axis.key(), v.trim()));
            RunConfig::load(spec.config.as_deref(), &overrides, spec.seed).map(|c| (v.trim().to_string(), c))
        })
        .collect::<Result<_>>()?;
    let (train, test) = load_data(&configs[0].1)?;

    let mut rows = Vec::new();
    for (value, config) in &configs {
        let dir = spec.out.join(format!("{}={}", axis.name(), value));
        write_resolved(config, &dir)?;
        let runs = run_grid(config, &train, &test, &dir, spec.jobs)?;
        let mut by_strategy: BTreeMap<Strategy, Vec<&RunSummary>> = BTreeMap::new();
        for r in &runs {
            by_strategy.entry(r.strategy).or_default().push(r);
        }
        for strategy in config.strategies()? {
            let group = &by_strategy[&strategy];
            let n = group.len() as f64;
            rows.push(SweepRow {
                value: value.clone(),
                strategy,
                replicates: group.len(),
                final_accuracy: group.iter().map(|r| r.final_accuracy).sum::<f64>() / n,
                best_accuracy: group.iter().map(|r| r.best_accuracy).sum::<f64>() / n,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in &rows {
        w.write_record([
            axis.name().to_string(),
            r.value.clone(),
            r.strategy.id(),
            r.replicates.to_string(),
            r.final_accuracy.to_string(),
            r.best_accuracy.to_string(),
        ])
        .expect("in-memory write");
    }
    output::write_csv(&spec.out.join("summary.csv"), &w.into_inner().expect("in-memory flush"))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessRow {
    pub user_id: usize,
    pub selections: u64,
    pub fraction: f64,
}

/// Per-user selection totals from a winners log. With `users`, every id below
/// it gets a row even if it never won.
pub fn fairness_report(log: &Path, users: Option<usize>) -> Result<Vec<FairnessRow>> {
    let rows = output::read_winners(log)?;
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    if let Some(n) = users {
        if let Some(w) = rows.iter().find(|w| w.user_id >= n) {
            return Err(Error::Log { path: log.to_path_buf(), message: format!("user {} outside 0..{n}", w.user_id) });
        }
        (0..n).for_each(|u| {
            counts.insert(u, 0);
        });
    }
    for w in &rows {
        *counts.entry(w.user_id).or_default() += 1;
    }
    let total = rows.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(user_id, selections)| FairnessRow {
            user_id,
            selections,
            fraction: if total == 0.0 { 0.0 } else { selections as f64 / total },
        })
        .collect())
}

pub fn fairness_csv(rows: &[FairnessRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FAIRNESS_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([r.user_id.to_string(), r.selections.to_string(), r.fraction.to_string()]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
