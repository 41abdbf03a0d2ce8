//! The convex-concave procedure driver: feasible initial point, the
//! convexify / solve / update loop, penalty growth, rounding and
//! certification.

use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cone::{solve, ConeProgram, ConicStatus};
use crate::criteria::{
    build_fip_lp, build_subproblem, dc_objective, default_coverage, theta_star, Criterion, Formulation, PenaltyState,
};
use crate::error::{Error, Result};
use crate::state::{ExpansionPoint, IterateState};
use crate::system::{
    qos_satisfied, score, sinr, AssignmentState, ChannelSet, Metrics, PrecoderMatrix, SystemConfig,
};

/// Violation allowed when checking that the feasible initial point satisfies
/// every convexified constraint at itself.
pub const FIP_CHECK_TOL: f64 = 1e-7;
/// Margin added to the consumed-power slack of the feasible initial point.
pub const FIP_POWER_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaGrowth {
    Additive,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcpConfig {
    pub criterion: Criterion,
    /// Convergence threshold on successive surrogate objectives.
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub max_iters: usize,
    /// Initial penalties. `None` fields in a config file fall back to the
    /// per-criterion defaults.
    pub penalties: PenaltyState,
    pub lambda_growth: f64,
    pub omega_step: f64,
    pub omega_growth: OmegaGrowth,
    pub tau_bin: f64,
    pub fip_restarts: usize,
    /// Require every scheduled group to have members (`δ_j ≤ Σ_i η_ij`).
    /// `None` picks the criterion default, see [`default_coverage`].
    pub coverage: Option<bool>,
    /// Adds `η_ij ≤ δ_j` to the relaxation.
    pub per_user_capacity: bool,
    /// Iterations allowed after Δ-convergence while the relaxation is still
    /// fractional.
    pub extra_iters: usize,
    /// Overrides the EE rate cap.
    pub theta_star: Option<f64>,
    /// Most leading iterations solved with all penalties switched off. The
    /// warm-up ends early once the penalty-free objective passes the Δ-test;
    /// the configured initial penalties apply from the next iteration on.
    pub warmup_iters: usize,
}

impl Default for CcpConfig {
    fn default() -> Self {
        CcpConfig::for_criterion(Criterion::Mee)
    }
}

impl CcpConfig {
    pub fn for_criterion(criterion: Criterion) -> Self {
        CcpConfig {
            criterion,
            delta: 1e-4,
            max_iters: 100,
            penalties: PenaltyState::default(),
            lambda_growth: 1.2,
            omega_step: 1.5,
            omega_growth: OmegaGrowth::Additive,
            tau_bin: 1e-3,
            fip_restarts: 3,
            coverage: None,
            per_user_capacity: true,
            extra_iters: 20,
            theta_star: None,
            warmup_iters: 20,
        }
    }

    /// Same configuration with penalties held at their initial values from
    /// the first iteration on.
    pub fn frozen(mut self) -> Self {
        self.warmup_iters = 0;
        self.lambda_growth = 1.0;
        self.omega_step = match self.omega_growth {
            OmegaGrowth::Additive => 0.0,
            OmegaGrowth::Multiplicative => 1.0,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::config("ccp.Delta", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("ccp.max_iters", "must be at least 1"));
        }
        if !(self.lambda_growth >= 1.0 && self.lambda_growth.is_finite()) {
            return Err(Error::config("ccp.lambda_growth", "must be at least 1"));
        }
        let step_ok = match self.omega_growth {
            OmegaGrowth::Additive => self.omega_step >= 0.0,
            OmegaGrowth::Multiplicative => self.omega_step >= 1.0,
        };
        if !(step_ok && self.omega_step.is_finite()) {
            return Err(Error::config("ccp.omega_step", "would shrink the penalty"));
        }
        if !(self.tau_bin > 0.0 && self.tau_bin < 0.5) {
            return Err(Error::config("ccp.tau_bin", "must lie in (0, 0.5)"));
        }
        if self.fip_restarts == 0 {
            return Err(Error::config("ccp.fip_restarts", "must be at least 1"));
        }
        if let Some(t) = self.theta_star {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("ccp.theta_star", "must be positive"));
            }
        }
        self.penalties.validate()
    }

    pub fn formulation(&self, cfg: &SystemConfig, h: &ChannelSet) -> Formulation {
        Formulation {
            criterion: self.criterion,
            coverage: self.coverage.unwrap_or_else(|| default_coverage(self.criterion)),
            per_user_capacity: self.per_user_capacity,
            theta_star: self.theta_star.unwrap_or_else(|| theta_star(cfg, h)),
            fixed: None,
        }
    }
}

/// Multiplies every λ by its growth factor and advances every Ω by its step.
pub fn update_penalties(pen: &PenaltyState, ccp: &CcpConfig, k: usize) -> PenaltyState {
    debug_assert!(k >= 1);
    let g = ccp.lambda_growth;
    let om = |v: f64| match ccp.omega_growth {
        OmegaGrowth::Additive => v + ccp.omega_step,
        OmegaGrowth::Multiplicative => v * ccp.omega_step,
    };
    PenaltyState {
        lambda1: pen.lambda1 * g,
        lambda2: pen.lambda2 * g,
        lambda3: pen.lambda3 * g,
        lambda4: pen.lambda4 * g,
        lambda5: pen.lambda5 * g,
        lambda6: pen.lambda6 * g,
        omega1: om(pen.omega1),
        omega2: om(pen.omega2),
        omega3: om(pen.omega3),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIters,
    SubproblemFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::MaxIters => 2,
            RunStatus::SubproblemFailure => 3,
        }
    }
}

/// One row of the iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Optimal surrogate objective including dropped entropy constants.
    pub surrogate_obj: f64,
    /// Penalized DC objective at the new iterate.
    pub dc_obj: f64,
    pub binary_residual: f64,
    /// Transmit power `‖W‖_F²` of the new iterate.
    pub power: f64,
    /// Membership penalty weight used in this iteration.
    pub lambda: f64,
    /// Group-count penalty weight used in this iteration.
    pub omega: f64,
    pub solver_status: ConicStatus,
    /// Whether the penalties used here equal those of the previous iteration.
    pub penalties_frozen: bool,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub passed: bool,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub criterion: Criterion,
    pub status: RunStatus,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Binary residual of the relaxed iterate that was rounded.
    pub final_binary_residual: f64,
    pub assignment: AssignmentState,
    pub precoder: PrecoderMatrix,
    pub metrics: Metrics,
    pub feasibility: FeasibilityVerdict,
    /// `(user, group)` pairs removed by the QoS repair.
    pub dropped: Vec<(usize, usize)>,
}

impl SolveReport {
    /// Trace as CSV with a fixed header.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,surrogate_obj,dc_obj,binary_residual,power,lambda,omega\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration, r.surrogate_obj, r.dc_obj, r.binary_residual, r.power, r.lambda, r.omega
            ));
        }
        s
    }
}

/// Rounded schedule and precoder with the repair log.
#[derive(Clone, Debug, PartialEq)]
pub struct Certified {
    pub assignment: AssignmentState,
    pub precoder: PrecoderMatrix,
    pub verdict: FeasibilityVerdict,
    pub dropped: Vec<(usize, usize)>,
}

/// Checks UGC, GSC (exactly `M` selected groups), QoS and the power budget
/// on a rounded schedule.
pub fn certify(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, a: &AssignmentState) -> FeasibilityVerdict {
    let mut violations = Vec::new();
    if let Err(e) = a.check_rounded(cfg) {
        violations.push(e.to_string());
    }
    let selected = a.delta.iter().filter(|&&d| d == 1.0).count();
    if selected != cfg.m {
        violations.push(format!("{selected} groups selected, expected {}", cfg.m));
    }
    for v in qos_satisfied(cfg, h, w, a).violators {
        violations.push(format!(
            "user {} in group {} has rate {} below {}",
            v.user, v.group, v.rate, v.required
        ));
    }
    if w.power() > cfg.p_t * (1.0 + 1e-9) {
        violations.push(format!("transmit power {} exceeds {}", w.power(), cfg.p_t));
    }
    FeasibilityVerdict {
        passed: violations.is_empty(),
        violations,
    }
}

/// Rounds a relaxed iterate: the `M` largest `δ` are selected (ties toward
/// more interested users, then lower index), `η_ij > 0.5` in a selected group
/// becomes a membership, unused precoder columns are switched off, and
/// members whose QoS fails at the final precoder are dropped.
pub fn round_and_certify(cfg: &SystemConfig, h: &ChannelSet, state: &IterateState) -> Certified {
    let (n, g) = (cfg.n, cfg.g);
    let mut order: Vec<usize> = (0..g).collect();
    let key = |d: f64| (d.clamp(0.0, 1.0) * 1e6).round() as i64;
    order.sort_by(|&a, &b| {
        key(state.delta[b])
            .cmp(&key(state.delta[a]))
            .then(cfg.interested_count(b).cmp(&cfg.interested_count(a)))
            .then(a.cmp(&b))
    });
    let mut a = AssignmentState::empty(n, g);
    for &j in order.iter().take(cfg.m) {
        a.delta[j] = 1.0;
    }
    for i in 0..n {
        for j in 0..g {
            if a.delta[j] == 1.0 && cfg.interested(i, j) && state.eta[(i, j)] > 0.5 {
                a.eta[(i, j)] = 1.0;
            }
        }
    }
    let mut w = state.w.clone();
    let switch_off_empty = |w: &mut PrecoderMatrix, a: &AssignmentState| {
        for j in 0..g {
            if a.delta[j] != 1.0 || a.members(j).is_empty() {
                w.w.column_mut(j).fill(Complex64::new(0.0, 0.0));
            }
        }
    };
    switch_off_empty(&mut w, &a);
    let p = w.power();
    if p > cfg.p_t {
        w.w *= Complex64::new((cfg.p_t / p).sqrt(), 0.0);
    }
    let mut dropped = Vec::new();
    for v in qos_satisfied(cfg, h, &w, &a).violators {
        a.eta[(v.user, v.group)] = 0.0;
        dropped.push((v.user, v.group));
    }
    // Removing a column only lowers interference, so survivors keep their QoS.
    switch_off_empty(&mut w, &a);
    let verdict = certify(cfg, h, &w, &a);
    Certified {
        assignment: a,
        precoder: w,
        verdict,
        dropped,
    }
}

/// Fills the rate, SINR and power slacks implied by a precoder and a
/// (possibly fractional) assignment so that the state satisfies every
/// convexified constraint at itself.
pub fn complete_state(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    w: &PrecoderMatrix,
    a: &AssignmentState,
) -> IterateState {
    let (n, g) = (cfg.n, cfg.g);
    let mut st = IterateState::zeros(cfg.m, n, g);
    st.w = w.clone();
    st.eta = a.eta.clone();
    st.delta = a.delta.clone();
    for i in 0..n {
        for j in 0..g {
            if cfg.interested(i, j) {
                st.alpha[(i, j)] = 1.0 + sinr(h, w, i, j, cfg.sigma2);
            } else {
                st.eta[(i, j)] = 0.0;
            }
        }
    }
    for j in 0..g {
        let ratio = (0..n)
            .filter(|&i| st.eta[(i, j)] > 0.0)
            .map(|i| st.alpha[(i, j)].log2() / st.eta[(i, j)])
            .fold(f64::INFINITY, f64::min);
        let cap = match f.criterion {
            Criterion::Ee => st.delta[j] * f.theta_star,
            _ => f.theta_star,
        };
        st.theta[j] = if ratio.is_finite() {
            ratio.min(cap)
        } else {
            (st.delta[j] * cfg.eps[j]).min(cap)
        };
        st.zeta[j] = cfg.bandwidth * st.delta[j] * st.theta[j];
    }
    let args: Vec<f64> = (0..g)
        .map(|j| match f.criterion {
            Criterion::Mee => st.zeta[j],
            _ => cfg.bandwidth * st.theta[j],
        })
        .collect();
    let processing: f64 = args.iter().map(|&x| cfg.power_fn.value(x)).sum();
    st.t = cfg.p0 + w.power() / cfg.rho + cfg.pi_coeff * processing + FIP_POWER_MARGIN;
    st.gamma = (0..g)
        .map(|j| cfg.bandwidth * cfg.psi[j] * st.theta[j])
        .sum::<f64>()
        .sqrt();
    st
}

/// Largest violation of the convexified constraints built around `st`,
/// evaluated at `st` itself.
pub fn self_violation(cfg: &SystemConfig, h: &ChannelSet, f: &Formulation, st: &IterateState) -> Result<f64> {
    let ep = ExpansionPoint::new(st.clone())?;
    let sp = build_subproblem(cfg, h, f, &ep, &PenaltyState::zero())?;
    Ok(sp.program.max_violation(&sp.embed(st)))
}

/// Precoder with i.i.d. complex Gaussian entries scaled to `‖W‖_F² = P_T`.
pub fn random_precoder(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> PrecoderMatrix {
    let mut w = PrecoderMatrix::zeros(cfg.m, cfg.g);
    for z in w.w.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *z = Complex64::new(re, im);
    }
    let p = w.power();
    if p > 0.0 {
        w.w *= Complex64::new((cfg.p_t / p).sqrt(), 0.0);
    }
    w
}

/// Feasible initial point for a given precoder: solves the membership LP and
/// completes the slacks. Returns the state and the LP objective.
pub fn fip_from_precoder(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    w0: &PrecoderMatrix,
) -> Result<(IterateState, f64)> {
    let lp = build_fip_lp(cfg, h, w0, f.coverage)?;
    let sol = solve(&lp.program, None)?;
    let (n, g) = (cfg.n, cfg.g);
    let mut a = AssignmentState::empty(n, g);
    if sol.status == ConicStatus::Optimal {
        let st = lp.extract(&sol.x);
        a.eta = st.eta;
        a.delta = st.delta;
    }
    // Snap solver noise so that every LP constraint holds exactly.
    let unusable: Vec<bool> = (0..g).map(|j| cfg.eps[j] > f.theta_star).collect();
    for i in 0..n {
        for j in 0..g {
            let tau = cfg.sinr_threshold(j);
            let mut v = a.eta[(i, j)].clamp(0.0, 1.0);
            if v < 1e-9 || !cfg.interested(i, j) || unusable[j] {
                v = 0.0;
            }
            if tau > 0.0 {
                v = v.min(sinr(h, w0, i, j, cfg.sigma2) / tau);
            }
            a.eta[(i, j)] = v;
        }
        let s: f64 = a.eta.row(i).sum();
        if s > 1.0 {
            a.eta.row_mut(i).scale_mut(1.0 / s);
        }
    }
    for j in 0..g {
        let members: f64 = a.eta.column(j).sum();
        let mut d = a.delta[j].clamp(0.0, 1.0).max(members / n as f64);
        if f.coverage || unusable[j] {
            d = d.min(members);
        }
        a.delta[j] = d;
    }
    let objective = a.delta.iter().sum::<f64>() + a.eta.sum();
    Ok((complete_state(cfg, h, f, w0, &a), objective))
}

/// Best of `ccp.fip_restarts` random-precoder feasible initial points by LP
/// objective, with the trivial point as fallback.
pub fn make_fip(cfg: &SystemConfig, h: &ChannelSet, ccp: &CcpConfig, seed: u64) -> Result<IterateState> {
    cfg.validate()?;
    h.check_against(cfg)?;
    ccp.validate()?;
    let f = ccp.formulation(cfg, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(IterateState, f64)> = None;
    for _ in 0..ccp.fip_restarts {
        let w0 = random_precoder(cfg, &mut rng);
        let (st, obj) = fip_from_precoder(cfg, h, &f, &w0)?;
        if self_violation(cfg, h, &f, &st)? > FIP_CHECK_TOL {
            continue;
        }
        if best.as_ref().is_none_or(|b| obj > b.1 + 1e-9) {
            best = Some((st, obj));
        }
    }
    if let Some((st, _)) = best {
        return Ok(st);
    }
    let w0 = random_precoder(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let trivial = complete_state(cfg, h, &f, &w0, &AssignmentState::empty(cfg.n, cfg.g));
    let v = self_violation(cfg, h, &f, &trivial)?;
    if v > FIP_CHECK_TOL {
        return Err(Error::FipCheck(format!("trivial point violates its own program by {v}")));
    }
    Ok(trivial)
}

/// Runs the CCP loop from `fip` and certifies the rounded result.
pub fn run(cfg: &SystemConfig, h: &ChannelSet, ccp: &CcpConfig, fip: &IterateState) -> Result<SolveReport> {
    cfg.validate()?;
    h.check_against(cfg)?;
    ccp.validate()?;
    fip.check_dims(cfg)?;
    let f = ccp.formulation(cfg, h);
    run_formulation(cfg, h, ccp, &f, fip)
}

/// [`run`] with an explicit formulation (used for fixed-assignment solves).
pub fn run_formulation(
    cfg: &SystemConfig,
    h: &ChannelSet,
    ccp: &CcpConfig,
    f: &Formulation,
    fip: &IterateState,
) -> Result<SolveReport> {
    let mut state = ExpansionPoint::new(fip.clone())?.into_state();
    let mut warming = ccp.warmup_iters > 0;
    let mut pen = if warming { PenaltyState::zero() } else { ccp.penalties };
    let mut prev_pen: Option<PenaltyState> = None;
    let mut prev_obj = dc_objective(cfg, f, &state, &pen);
    let mut trace = Vec::new();
    let mut failures = 0;
    let mut stalled_since: Option<usize> = None;
    let mut status = RunStatus::MaxIters;

    for k in 1..=ccp.max_iters {
        let started = Instant::now();
        let ep = ExpansionPoint::new(state.clone())?;
        let sp = build_subproblem(cfg, h, f, &ep, &pen)?;
        let sol = solve(&sp.program, None)?;
        let (lam, _, om) = pen.for_criterion(f.criterion);
        let frozen = prev_pen.as_ref() == Some(&pen);
        if sol.status != ConicStatus::Optimal {
            failures += 1;
            trace.push(IterationRecord {
                iteration: k,
                surrogate_obj: prev_obj,
                dc_obj: dc_objective(cfg, f, &state, &pen),
                binary_residual: state.assignment().binary_residual(),
                power: state.w.power(),
                lambda: lam,
                omega: om,
                solver_status: sol.status,
                penalties_frozen: frozen,
                wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            if failures >= 2 {
                status = RunStatus::SubproblemFailure;
                break;
            }
            prev_pen = Some(pen);
            if warming && k >= ccp.warmup_iters {
                warming = false;
                pen = ccp.penalties;
            } else if !warming {
                pen = update_penalties(&pen, ccp, k);
            }
            continue;
        }
        failures = 0;
        let next = sp.extract(&sol.x);
        let obj = sp.surrogate_objective(&sol.x);
        let residual = next.assignment().binary_residual();
        trace.push(IterationRecord {
            iteration: k,
            surrogate_obj: obj,
            dc_obj: dc_objective(cfg, f, &next, &pen),
            binary_residual: residual,
            power: next.w.power(),
            lambda: lam,
            omega: om,
            solver_status: sol.status,
            penalties_frozen: frozen,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        let settled = (obj - prev_obj).abs() < ccp.delta;
        prev_obj = obj;
        state = next;
        prev_pen = Some(pen);
        if warming {
            // The relaxation has settled or the warm-up budget is spent.
            if settled || k >= ccp.warmup_iters {
                warming = false;
                pen = ccp.penalties;
            }
            continue;
        }
        if settled {
            let since = *stalled_since.get_or_insert(k);
            if residual <= ccp.tau_bin || k - since >= ccp.extra_iters {
                status = RunStatus::Converged;
                break;
            }
        }
        pen = update_penalties(&pen, ccp, k);
    }

    let relaxed_residual = state.assignment().binary_residual();
    let cert = round_and_certify(cfg, h, &state);
    let metrics = score(cfg, h, &cert.precoder, &cert.assignment)?;
    Ok(SolveReport {
        criterion: f.criterion,
        status,
        iterations: trace.len(),
        trace,
        final_binary_residual: relaxed_residual,
        assignment: cert.assignment,
        precoder: cert.precoder,
        metrics,
        feasibility: cert.verdict,
        dropped: cert.dropped,
    })
}

/// The first conic subproblem a run from `seed` would solve, for debug dumps.
pub fn first_subproblem(cfg: &SystemConfig, h: &ChannelSet, ccp: &CcpConfig, seed: u64) -> Result<ConeProgram> {
    let fip = make_fip(cfg, h, ccp, seed)?;
    let f = ccp.formulation(cfg, h);
    let pen = if ccp.warmup_iters > 0 { PenaltyState::zero() } else { ccp.penalties };
    let ep = ExpansionPoint::new(fip)?;
    Ok(build_subproblem(cfg, h, &f, &ep, &pen)?.program)
}

/// Feasible initial point from `seed`, then [`run`].
pub fn solve_instance(cfg: &SystemConfig, h: &ChannelSet, ccp: &CcpConfig, seed: u64) -> Result<SolveReport> {
    let fip = make_fip(cfg, h, ccp, seed)?;
    run(cfg, h, ccp, &fip)
}
