//! Ground truth for tiny instances: exhaustive enumeration of schedules,
//! multi-start precoding per fixed schedule, an independent metric path and
//! a finite-difference gradient check.
//!
//! The inner precoding solve is best-found, not certified optimal, so gaps
//! measured against this oracle are lower bounds on the true gap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccp::{certify, complete_state, random_precoder, run_formulation, self_violation, CcpConfig, FIP_CHECK_TOL};
use crate::cone::{solve, ConicStatus};
use crate::criteria::{build_qos_feasibility, theta_star, Criterion, Formulation, PenaltyState};
use crate::error::{Error, Result};
use crate::state::{IterateState, Sym, SymAffine};
use crate::system::{score, AssignmentState, ChannelSet, Metrics, PrecoderMatrix, SystemConfig};

pub const MAX_USERS: usize = 4;
pub const MAX_GROUPS: usize = 3;
pub const MAX_ANTENNAS: usize = 2;
pub const MAX_ASSIGNMENTS: usize = 256;
/// Inner restarts used when none are given.
pub const DEFAULT_RESTARTS: usize = 8;

/// Phase-one iterations per restart.
const PHASE_ONE_ITERS: usize = 60;

/// A configuration and channel small enough to enumerate.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub cfg: SystemConfig,
    pub h: ChannelSet,
}

impl TinyInstance {
    pub fn new(cfg: SystemConfig, h: ChannelSet) -> Result<Self> {
        cfg.validate()?;
        h.check_against(&cfg)?;
        if cfg.n > MAX_USERS || cfg.g > MAX_GROUPS || cfg.m > MAX_ANTENNAS {
            return Err(Error::TooLarge(format!(
                "N = {}, G = {}, M = {} (limits {MAX_USERS}, {MAX_GROUPS}, {MAX_ANTENNAS})",
                cfg.n, cfg.g, cfg.m
            )));
        }
        let bound = (cfg.g + 1).pow(cfg.n as u32);
        if bound > MAX_ASSIGNMENTS {
            return Err(Error::TooLarge(format!("(G+1)^N = {bound} exceeds {MAX_ASSIGNMENTS}")));
        }
        Ok(TinyInstance { cfg, h })
    }
}

/// Size-`k` subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Every rounded schedule: exactly `M` groups selected, each user in at most
/// one selected group it is interested in.
pub fn enumerate_assignments(inst: &TinyInstance) -> Vec<AssignmentState> {
    let cfg = &inst.cfg;
    let mut out = Vec::new();
    for sel in subsets(cfg.g, cfg.m) {
        // Per user: stay out, or join one interested selected group.
        let choices: Vec<Vec<Option<usize>>> = (0..cfg.n)
            .map(|i| {
                let mut c = vec![None];
                c.extend(sel.iter().filter(|&&j| cfg.interested(i, j)).map(|&j| Some(j)));
                c
            })
            .collect();
        let mut idx = vec![0usize; cfg.n];
        loop {
            let mut a = AssignmentState::empty(cfg.n, cfg.g);
            for &j in &sel {
                a.delta[j] = 1.0;
            }
            for i in 0..cfg.n {
                if let Some(j) = choices[i][idx[i]] {
                    a.eta[(i, j)] = 1.0;
                }
            }
            out.push(a);
            // Odometer increment.
            let mut i = 0;
            while i < cfg.n {
                idx[i] += 1;
                if idx[i] < choices[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == cfg.n {
                break;
            }
        }
    }
    out
}

/// `Σ_{|S| = M} Π_i (1 + |{j ∈ S : i interested in j}|)`.
pub fn assignment_count(cfg: &SystemConfig) -> usize {
    subsets(cfg.g, cfg.m)
        .iter()
        .map(|sel| {
            (0..cfg.n)
                .map(|i| 1 + sel.iter().filter(|&&j| cfg.interested(i, j)).count())
                .product::<usize>()
        })
        .sum()
}

/// The quantity each criterion maximizes.
pub fn criterion_score(c: Criterion, m: &Metrics) -> f64 {
    match c {
        Criterion::Mee => m.mee,
        Criterion::Ee => m.ee,
        Criterion::Sum => m.scheduled_users as f64,
    }
}

/// Metrics recomputed from scratch with explicit sums, independent of
/// [`score`].
pub fn brute_force_metrics(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, a: &AssignmentState) -> Metrics {
    let (n, g, m) = (cfg.n, cfg.g, cfg.m);
    let gain = |i: usize, l: usize| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for k in 0..m {
            let (hr, hi) = (h.h[(i, k)].re, h.h[(i, k)].im);
            let (wr, wi) = (w.w[(k, l)].re, w.w[(k, l)].im);
            re += hr * wr - hi * wi;
            im += hr * wi + hi * wr;
        }
        re * re + im * im
    };
    let mut min_rates = vec![0.0; g];
    let mut users = 0;
    let mut weighted = 0.0;
    for j in 0..g {
        if a.delta[j] != 1.0 {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| a.eta[(i, j)] == 1.0).collect();
        users += members.len();
        let mut worst = f64::INFINITY;
        for &i in &members {
            let interference: f64 = (0..g).filter(|&l| l != j).map(|l| gain(i, l)).sum();
            worst = worst.min(gain(i, j) / (interference + cfg.sigma2));
        }
        if worst.is_finite() {
            min_rates[j] = cfg.bandwidth * (1.0 + worst).log2();
        }
        weighted += cfg.psi[j] * members.len() as f64 * min_rates[j];
    }
    let tx: f64 = w.w.iter().map(|z| z.re * z.re + z.im * z.im).sum();
    let processing: f64 = min_rates.iter().map(|&r| cfg.power_fn.value(r)).sum();
    let power = cfg.p0 + tx / cfg.rho + cfg.pi_coeff * processing;
    let throughput: f64 = min_rates.iter().sum();
    Metrics {
        mee: weighted / power,
        ee: throughput / power,
        throughput,
        consumed_power: power,
        scheduled_users: users,
        scheduled_groups: a.delta.iter().filter(|&&d| d == 1.0).count(),
        min_rates,
    }
}

/// Best-found precoder for one fixed schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum FixedOutcome {
    Found { precoder: PrecoderMatrix, metrics: Metrics },
    Infeasible { reason: String },
}

/// Drives the phase-one program from `w` until every member meets its QoS.
fn phase_one(cfg: &SystemConfig, h: &ChannelSet, a: &AssignmentState, mut w: PrecoderMatrix) -> Result<Option<PrecoderMatrix>> {
    let mut prev = f64::INFINITY;
    for _ in 0..PHASE_ONE_ITERS {
        let (sp, slacks) = build_qos_feasibility(cfg, h, a, &w)?;
        let sol = solve(&sp.program, None)?;
        if sol.status != ConicStatus::Optimal {
            return Ok(None);
        }
        w = sp.extract(&sol.x).w;
        let total: f64 = slacks.iter().map(|&k| sol.x[k].max(0.0)).sum();
        if total < 1e-9 {
            return Ok(Some(w));
        }
        if total > prev - 1e-10 {
            return Ok(None);
        }
        prev = total;
    }
    Ok(None)
}

/// Multi-start CCP with `η`, `δ` pinned to `a` and penalties off. Each start
/// draws a random full-power precoder, repairs QoS by phase one, then runs
/// the criterion's fixed-schedule CCP.
pub fn best_fixed_assignment(
    inst: &TinyInstance,
    a: &AssignmentState,
    criterion: Criterion,
    restarts: usize,
    seed: u64,
) -> Result<FixedOutcome> {
    let (cfg, h) = (&inst.cfg, &inst.h);
    a.check_rounded(cfg)?;
    if a.eta.iter().all(|&v| v == 0.0) {
        let w = PrecoderMatrix::zeros(cfg.m, cfg.g);
        let metrics = score(cfg, h, &w, a)?;
        return Ok(FixedOutcome::Found { precoder: w, metrics });
    }
    // Even the whole budget on a matched filter cannot meet the threshold.
    for j in a.selected_groups() {
        for i in a.members(j) {
            let best = cfg.p_t * h.user_gain(i) / cfg.sigma2;
            if best < cfg.sinr_threshold(j) {
                return Ok(FixedOutcome::Infeasible {
                    reason: format!("user {i} reaches SINR {best} at most, group {j} needs {}", cfg.sinr_threshold(j)),
                });
            }
        }
    }
    // Empty selected groups are switched off for the inner run, so that the
    // coverage constraint holds and EE cannot credit them with a rate.
    let mut pinned = a.clone();
    for j in 0..cfg.g {
        if a.members(j).is_empty() {
            pinned.delta[j] = 0.0;
        }
    }
    let f = Formulation {
        criterion,
        coverage: true,
        per_user_capacity: true,
        theta_star: theta_star(cfg, h),
        fixed: Some(pinned.clone()),
    };
    let mut ccp = CcpConfig::for_criterion(criterion);
    ccp.penalties = PenaltyState::zero();
    ccp.warmup_iters = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(PrecoderMatrix, Metrics, f64)> = None;
    let consider = |w: PrecoderMatrix, best: &mut Option<(PrecoderMatrix, Metrics, f64)>| -> Result<()> {
        if !certify(cfg, h, &w, a).passed {
            return Ok(());
        }
        let m = score(cfg, h, &w, a)?;
        let s = criterion_score(criterion, &m);
        if best.as_ref().is_none_or(|b| s > b.2) {
            *best = Some((w, m, s));
        }
        Ok(())
    };
    for _ in 0..restarts.max(1) {
        let w0 = random_precoder(cfg, &mut rng);
        let Some(w1) = phase_one(cfg, h, a, w0)? else { continue };
        consider(w1.clone(), &mut best)?;
        let fip = complete_state(cfg, h, &f, &w1, &pinned);
        if self_violation(cfg, h, &f, &fip)? > FIP_CHECK_TOL {
            continue;
        }
        let report = run_formulation(cfg, h, &ccp, &f, &fip)?;
        consider(report.precoder, &mut best)?;
    }
    Ok(match best {
        Some((precoder, metrics, _)) => FixedOutcome::Found { precoder, metrics },
        None => FixedOutcome::Infeasible {
            reason: format!("no QoS-feasible precoder in {restarts} restarts"),
        },
    })
}

/// Winner of the exhaustive search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub criterion: Criterion,
    pub assignment: AssignmentState,
    pub precoder: PrecoderMatrix,
    pub metrics: Metrics,
    pub score: f64,
    /// Enumerated schedules, not counting the incumbent.
    pub candidates: usize,
    pub infeasible: usize,
    /// The incumbent was never beaten.
    pub incumbent_won: bool,
}

/// Maximizes the criterion's score over every enumerated schedule. The
/// incumbent (typically the heuristic's output), when feasible, competes as
/// a candidate too, so the result never scores below it.
pub fn exhaustive_best(
    inst: &TinyInstance,
    criterion: Criterion,
    restarts: usize,
    incumbent: Option<(&AssignmentState, &PrecoderMatrix)>,
) -> Result<OracleResult> {
    let (cfg, h) = (&inst.cfg, &inst.h);
    let all = enumerate_assignments(inst);
    let outcomes: Vec<Result<FixedOutcome>> = all
        .par_iter()
        .enumerate()
        .map(|(k, a)| best_fixed_assignment(inst, a, criterion, restarts, k as u64))
        .collect();

    let mut best: Option<OracleResult> = None;
    let mut infeasible = 0;
    if let Some((a, w)) = incumbent {
        if certify(cfg, h, w, a).passed {
            let metrics = score(cfg, h, w, a)?;
            best = Some(OracleResult {
                criterion,
                assignment: a.clone(),
                precoder: w.clone(),
                score: criterion_score(criterion, &metrics),
                metrics,
                candidates: all.len(),
                infeasible: 0,
                incumbent_won: true,
            });
        }
    }
    for (a, out) in all.iter().zip(outcomes) {
        match out? {
            FixedOutcome::Infeasible { .. } => infeasible += 1,
            FixedOutcome::Found { precoder, metrics } => {
                let s = criterion_score(criterion, &metrics);
                if best.as_ref().is_none_or(|b| s > b.score) {
                    best = Some(OracleResult {
                        criterion,
                        assignment: a.clone(),
                        precoder,
                        metrics,
                        score: s,
                        candidates: all.len(),
                        infeasible: 0,
                        incumbent_won: false,
                    });
                }
            }
        }
    }
    // The all-empty schedule is always feasible, so `best` is set.
    let mut r = best.ok_or_else(|| Error::TooLarge("no candidate schedules".into()))?;
    r.infeasible = infeasible;
    Ok(r)
}

/// Largest error between the coefficients of `grad` and central finite
/// differences of `f` at `point`, over `syms`. Each coordinate's error is
/// relative to `max(|analytic|, |numeric|, 1)`.
pub fn check_gradient(
    f: impl Fn(&IterateState) -> f64,
    grad: &SymAffine,
    point: &IterateState,
    syms: &[Sym],
    step: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = point.clone();
    for &s in syms {
        let v = point.value(s);
        p.set(s, v + step);
        let fp = f(&p);
        p.set(s, v - step);
        let fm = f(&p);
        p.set(s, v);
        let fd = (fp - fm) / (2.0 * step);
        let an = grad.coeff(s);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::generate_channels;

    #[test]
    fn hand_counts() {
        let cfg = SystemConfig::standard(1, 1, 1, 10.0, 1.0);
        let h = generate_channels(&cfg, 0).unwrap();
        let inst = TinyInstance::new(cfg, h).unwrap();
        assert_eq!(enumerate_assignments(&inst).len(), 2);

        let cfg = SystemConfig::standard(1, 2, 2, 10.0, 1.0);
        let h = generate_channels(&cfg, 0).unwrap();
        let inst = TinyInstance::new(cfg, h).unwrap();
        assert_eq!(enumerate_assignments(&inst).len(), 8);
        assert_eq!(assignment_count(&inst.cfg), 8);
    }

    #[test]
    fn bounds_are_enforced() {
        let cfg = SystemConfig::standard(2, 5, 2, 10.0, 1.0);
        let h = generate_channels(&cfg, 0).unwrap();
        assert!(matches!(TinyInstance::new(cfg, h), Err(Error::TooLarge(_))));
    }
}
