//! Oracle gap reports and the invariant check applied to saved solve reports.

use anyhow::Result;
use mgmc_core::ccp::{certify, solve_instance, CcpConfig, RunStatus, SolveReport};
use mgmc_core::criteria::Criterion;
use mgmc_core::oracle::{brute_force_metrics, criterion_score, exhaustive_best, OracleResult, TinyInstance};
use mgmc_core::system::{ChannelSet, Metrics, SystemConfig};
use serde::{Deserialize, Serialize};

/// Denominator floor of the relative gap.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub criterion: Criterion,
    pub heuristic_status: RunStatus,
    pub heuristic_score: f64,
    pub heuristic_metrics: Metrics,
    pub oracle_score: f64,
    /// `(oracle − heuristic) / max(oracle, GAP_FLOOR)`.
    pub gap: f64,
    pub oracle: OracleResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub seed: u64,
    pub entries: Vec<GapEntry>,
}

pub fn relative_gap(oracle: f64, heuristic: f64) -> f64 {
    (oracle - heuristic) / oracle.max(GAP_FLOOR)
}

/// Heuristic and exhaustive search for every criterion on one tiny instance.
/// `ccp` supplies the heuristic settings; its criterion is replaced.
pub fn oracle_gaps(
    cfg: &SystemConfig,
    h: &ChannelSet,
    ccp: &CcpConfig,
    seed: u64,
    restarts: usize,
) -> Result<GapReport> {
    let inst = TinyInstance::new(cfg.clone(), h.clone())?;
    let mut entries = Vec::new();
    for c in Criterion::ALL {
        let run = CcpConfig {
            criterion: c,
            ..ccp.clone()
        };
        let r = solve_instance(cfg, h, &run, seed)?;
        let incumbent = r.feasibility.passed.then_some((&r.assignment, &r.precoder));
        let o = exhaustive_best(&inst, c, restarts, incumbent)?;
        let hs = criterion_score(c, &r.metrics);
        entries.push(GapEntry {
            criterion: c,
            heuristic_status: r.status,
            heuristic_score: hs,
            heuristic_metrics: r.metrics,
            oracle_score: o.score,
            gap: relative_gap(o.score, hs),
            oracle: o,
        });
    }
    Ok(GapReport { seed, entries })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Problems found in a saved report; empty means every check passed.
pub fn check_report(cfg: &SystemConfig, h: &ChannelSet, r: &SolveReport) -> Vec<String> {
    let mut problems = Vec::new();
    if r.trace.len() != r.iterations {
        problems.push(format!("trace has {} rows but iterations = {}", r.trace.len(), r.iterations));
    }
    if let Err(e) = r.assignment.check_rounded(cfg) {
        problems.push(e.to_string());
        return problems;
    }
    let verdict = certify(cfg, h, &r.precoder, &r.assignment);
    if verdict.passed != r.feasibility.passed {
        problems.push(format!(
            "recorded verdict {} differs from recomputed {} ({:?})",
            r.feasibility.passed, verdict.passed, verdict.violations
        ));
    }
    if r.status == RunStatus::Converged && !verdict.passed {
        problems.push(format!("converged run is infeasible: {:?}", verdict.violations));
    }
    let m = brute_force_metrics(cfg, h, &r.precoder, &r.assignment);
    let pairs = [
        ("mee", m.mee, r.metrics.mee),
        ("ee", m.ee, r.metrics.ee),
        ("throughput", m.throughput, r.metrics.throughput),
        ("consumed_power", m.consumed_power, r.metrics.consumed_power),
    ];
    for (name, want, got) in pairs {
        if !close(want, got) {
            problems.push(format!("{name}: recorded {got}, recomputed {want}"));
        }
    }
    if m.scheduled_users != r.metrics.scheduled_users || m.scheduled_groups != r.metrics.scheduled_groups {
        problems.push("scheduled user or group counts differ from the assignment".into());
    }
    problems
}
