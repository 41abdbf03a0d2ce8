//! Monte-Carlo sweeps: one solve per (axis value, realization, criterion),
//! raw rows in realization order and one aggregate row per (axis value,
//! criterion).

use std::path::Path;

use anyhow::{Context, Result};
use mgmc_core::ccp::{solve_instance, RunStatus};
use mgmc_core::criteria::Criterion;
use mgmc_core::system::{generate_channels, watts_to_dbw};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentSpec;

/// Column order of `raw.csv`.
pub const RAW_HEADER: &[&str] = &[
    "axis",
    "value",
    "criterion",
    "realization",
    "seed",
    "status",
    "iterations",
    "scheduled_users",
    "scheduled_groups",
    "throughput",
    "consumed_power",
    "consumed_power_dbw",
    "mee",
    "ee",
    "feasible",
    "error",
];

/// One solve. Metric columns are empty when the solve returned an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub axis: String,
    pub value: f64,
    pub criterion: Criterion,
    pub realization: usize,
    pub seed: u64,
    /// `Converged`, `MaxIters`, `SubproblemFailure` or `Error`.
    pub status: String,
    pub iterations: Option<usize>,
    pub scheduled_users: Option<usize>,
    pub scheduled_groups: Option<usize>,
    pub throughput: Option<f64>,
    pub consumed_power: Option<f64>,
    pub consumed_power_dbw: Option<f64>,
    pub mee: Option<f64>,
    pub ee: Option<f64>,
    pub feasible: Option<bool>,
    pub error: String,
}

impl RawRow {
    pub fn failed(&self) -> bool {
        self.status == "Error"
    }
}

/// Mean and standard error over the successful realizations of one cell.
/// `consumed_power_dbw` averages the per-realization dBW values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis: String,
    pub value: f64,
    pub criterion: Criterion,
    pub runs: usize,
    pub failures: usize,
    pub scheduled_users_mean: f64,
    pub scheduled_users_se: f64,
    pub throughput_mean: f64,
    pub throughput_se: f64,
    pub consumed_power_mean: f64,
    pub consumed_power_se: f64,
    pub consumed_power_dbw_mean: f64,
    pub consumed_power_dbw_se: f64,
    pub mee_mean: f64,
    pub mee_se: f64,
    pub ee_mean: f64,
    pub ee_se: f64,
    pub iterations_mean: f64,
    pub iterations_se: f64,
    pub converged_fraction: f64,
}

/// `(mean, standard error)`; the error is zero for fewer than two samples
/// and both are NaN for none.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn solve_row(spec: &ExperimentSpec, value: f64, realization: usize, c: Criterion) -> RawRow {
    let seed = spec.seed.wrapping_add(realization as u64);
    let mut row = RawRow {
        axis: spec.sweep.axis.name().to_string(),
        value,
        criterion: c,
        realization,
        seed,
        status: "Error".into(),
        iterations: None,
        scheduled_users: None,
        scheduled_groups: None,
        throughput: None,
        consumed_power: None,
        consumed_power_dbw: None,
        mee: None,
        ee: None,
        feasible: None,
        error: String::new(),
    };
    let outcome = (|| -> Result<_> {
        let cfg = spec.system_at(value)?;
        let h = generate_channels(&cfg, seed)?;
        Ok(solve_instance(&cfg, &h, &spec.ccp_for(c), seed)?)
    })();
    match outcome {
        Ok(r) => {
            row.status = format!("{:?}", r.status);
            row.iterations = Some(r.iterations);
            row.scheduled_users = Some(r.metrics.scheduled_users);
            row.scheduled_groups = Some(r.metrics.scheduled_groups);
            row.throughput = Some(r.metrics.throughput);
            row.consumed_power = Some(r.metrics.consumed_power);
            row.consumed_power_dbw = Some(watts_to_dbw(r.metrics.consumed_power));
            row.mee = Some(r.metrics.mee);
            row.ee = Some(r.metrics.ee);
            row.feasible = Some(r.feasibility.passed);
        }
        Err(e) => row.error = format!("{e:#}"),
    }
    row
}

/// Runs every cell of the grid on `workers` threads (0 = one per core).
/// Rows come back in (value, realization, criterion) order regardless of
/// scheduling.
pub fn run_sweep(spec: &ExperimentSpec, workers: usize) -> Result<Vec<RawRow>> {
    spec.validate()?;
    let jobs: Vec<(f64, usize, Criterion)> = spec
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..spec.realizations).flat_map(move |r| spec.criteria.iter().map(move |&c| (v, r, c))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| jobs.par_iter().map(|&(v, r, c)| solve_row(spec, v, r, c)).collect()))
}

/// One row per (axis value, criterion) in first-appearance order.
pub fn aggregate(rows: &[RawRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, f64, Criterion)> = Vec::new();
    for r in rows {
        let k = (r.axis.clone(), r.value, r.criterion);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(axis, value, criterion)| {
            let cell: Vec<&RawRow> = rows
                .iter()
                .filter(|r| r.axis == axis && r.value == value && r.criterion == criterion)
                .collect();
            let ok: Vec<&RawRow> = cell.iter().copied().filter(|r| !r.failed()).collect();
            let col = |f: &dyn Fn(&RawRow) -> Option<f64>| -> (f64, f64) {
                let xs: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                mean_se(&xs)
            };
            let (su, su_se) = col(&|r| r.scheduled_users.map(|v| v as f64));
            let (tp, tp_se) = col(&|r| r.throughput);
            let (pw, pw_se) = col(&|r| r.consumed_power);
            let (pd, pd_se) = col(&|r| r.consumed_power_dbw);
            let (mee, mee_se) = col(&|r| r.mee);
            let (ee, ee_se) = col(&|r| r.ee);
            let (it, it_se) = col(&|r| r.iterations.map(|v| v as f64));
            let converged = ok.iter().filter(|r| r.status == format!("{:?}", RunStatus::Converged)).count();
            AggregateRow {
                axis,
                value,
                criterion,
                runs: ok.len(),
                failures: cell.len() - ok.len(),
                scheduled_users_mean: su,
                scheduled_users_se: su_se,
                throughput_mean: tp,
                throughput_se: tp_se,
                consumed_power_mean: pw,
                consumed_power_se: pw_se,
                consumed_power_dbw_mean: pd,
                consumed_power_dbw_se: pd_se,
                mee_mean: mee,
                mee_se,
                ee_mean: ee,
                ee_se,
                iterations_mean: it,
                iterations_se: it_se,
                converged_fraction: if ok.is_empty() { 0.0 } else { converged as f64 / ok.len() as f64 },
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|x| x.map_err(Into::into)).collect()
}
