//! Convex subproblems for the MEE, EE and SUM criteria, the feasible-point
//! LP, and the fixed-assignment QoS feasibility program.
//!
//! Every builder returns a [`Subproblem`] that pairs the [`ConeProgram`] with
//! the map from symbolic coordinates to program columns, so that solutions can
//! be read back into an [`IterateState`] and states can be embedded as points.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::cone::{lower_log_lb, lower_quad_over_lin, ConeProgram, LinExpr};
use crate::error::{Error, Result};
use crate::state::{response_forms, ExpansionPoint, IterateState, Sym, SymAffine};
use crate::surrogate::{
    entropy, f_exact, taylor_entropy, taylor_f, taylor_g, taylor_gamma_sq, taylor_i, taylor_j, taylor_p2,
    taylor_sum_sq,
};
use crate::system::{sinr, AssignmentState, ChannelSet, ConvexTerm, PrecoderMatrix, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "MEE", alias = "mee")]
    Mee,
    #[serde(rename = "EE", alias = "ee")]
    Ee,
    #[serde(rename = "SUM", alias = "sum")]
    Sum,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Mee, Criterion::Ee, Criterion::Sum];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Mee => "MEE",
            Criterion::Ee => "EE",
            Criterion::Sum => "SUM",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MEE" => Ok(Criterion::Mee),
            "EE" => Ok(Criterion::Ee),
            "SUM" => Ok(Criterion::Sum),
            _ => Err(Error::config("criterion", format!("unknown criterion `{s}`"))),
        }
    }
}

/// Penalty weights. `lambda1/2` belong to MEE, `lambda3/4` to EE and
/// `lambda5/6` to SUM (membership / scheduling entropy); `omega1..3` weight
/// the group-count penalty of MEE, EE and SUM respectively.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
}

impl Default for PenaltyState {
    fn default() -> Self {
        PenaltyState {
            lambda1: 0.01,
            lambda2: 0.01,
            lambda3: 0.5,
            lambda4: 0.5,
            lambda5: 0.05,
            lambda6: 0.05,
            omega1: 2.5,
            omega2: 5.0,
            omega3: 1.0,
        }
    }
}

impl PenaltyState {
    pub fn zero() -> Self {
        PenaltyState {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            lambda6: 0.0,
            omega1: 0.0,
            omega2: 0.0,
            omega3: 0.0,
        }
    }

    /// `(λ_membership, λ_scheduling, Ω)` for `c`.
    pub fn for_criterion(&self, c: Criterion) -> (f64, f64, f64) {
        match c {
            Criterion::Mee => (self.lambda1, self.lambda2, self.omega1),
            Criterion::Ee => (self.lambda3, self.lambda4, self.omega2),
            Criterion::Sum => (self.lambda5, self.lambda6, self.omega3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("omega3", self.omega3),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("penalties.{name}"), "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Structural switches shared by all builders.
#[derive(Clone, Debug, PartialEq)]
pub struct Formulation {
    pub criterion: Criterion,
    /// Adds `δ_j ≤ Σ_i η_ij`, so that a scheduled group must have members.
    pub coverage: bool,
    /// Adds `η_ij ≤ δ_j` next to the aggregate capacity `Σ_i η_ij ≤ N·δ_j`.
    pub per_user_capacity: bool,
    /// Rate cap used by EE to switch unscheduled groups off.
    pub theta_star: f64,
    /// Pins `η` and `δ` to a rounded assignment.
    pub fixed: Option<AssignmentState>,
}

impl Formulation {
    pub fn new(criterion: Criterion, cfg: &SystemConfig, h: &ChannelSet) -> Self {
        Formulation {
            criterion,
            coverage: default_coverage(criterion),
            per_user_capacity: true,
            theta_star: theta_star(cfg, h),
            fixed: None,
        }
    }
}

/// Coverage is needed by EE only: without members an EE group's rate is
/// bounded by nothing but `Θ*`. MEE and SUM may leave a selected group empty.
pub fn default_coverage(c: Criterion) -> bool {
    c == Criterion::Ee
}

/// `log2(1 + P_T·max_i ‖h_i‖²/σ²)`, an upper bound on every achievable rate.
pub fn theta_star(cfg: &SystemConfig, h: &ChannelSet) -> f64 {
    let g = (0..h.n_users()).map(|i| h.user_gain(i)).fold(0.0, f64::max);
    (1.0 + cfg.p_t * g / cfg.sigma2).log2()
}

/// Column map of a built program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layout {
    map: BTreeMap<Sym, usize>,
    ell: BTreeMap<(usize, usize), usize>,
    pi: Vec<Option<usize>>,
    q: Option<usize>,
    s_obj: Option<usize>,
}

impl Layout {
    pub fn index(&self, s: Sym) -> Option<usize> {
        self.map.get(&s).copied()
    }
}

/// A built convex program plus everything needed to interpret it.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub criterion: Option<Criterion>,
    pub program: ConeProgram,
    pub layout: Layout,
    /// Sum of the penalty-weighted entropy constants left out of the program
    /// objective.
    pub dropped: f64,
    /// Weights `BΨ_j/2` of the aggregated `(η² + Θ²)/t` objective term.
    obj_weights: Vec<(Sym, Sym, f64)>,
    p1_args: Vec<SymAffine>,
    p1: ConvexTerm,
    m: usize,
    dims: (usize, usize, usize),
}

impl Subproblem {
    /// Value of the (maximized) surrogate objective at program point `x`,
    /// including the dropped constants.
    pub fn surrogate_objective(&self, x: &[f64]) -> f64 {
        -self.program.objective.eval(x) + self.dropped
    }

    /// Reads a program point back into an iterate. Coordinates the program
    /// does not carry keep their neutral values.
    pub fn extract(&self, x: &[f64]) -> IterateState {
        let (m, n, g) = self.dims;
        let mut st = IterateState::zeros(m, n, g);
        for (&s, &k) in &self.layout.map {
            st.set(s, x[k]);
        }
        st
    }

    /// Embeds a state as a program point, setting auxiliaries tight.
    pub fn embed(&self, st: &IterateState) -> Vec<f64> {
        let mut x = vec![0.0; self.program.num_vars];
        for (&s, &k) in &self.layout.map {
            x[k] = st.value(s);
        }
        for (&(i, j), &k) in &self.layout.ell {
            x[k] = st.alpha[(i, j)].ln();
        }
        for (j, k) in self.layout.pi.iter().enumerate() {
            if let Some(k) = *k {
                x[k] = self.p1.value(self.p1_args[j].eval(st));
            }
        }
        if let Some(k) = self.layout.q {
            x[k] = (st.delta.iter().sum::<f64>() - self.m as f64).powi(2);
        }
        if let Some(k) = self.layout.s_obj {
            x[k] = self
                .obj_weights
                .iter()
                .map(|&(a, b, w)| w * (st.value(a).powi(2) + st.value(b).powi(2)))
                .sum::<f64>()
                / st.t;
        }
        x
    }
}

struct Builder<'a> {
    cfg: &'a SystemConfig,
    h: &'a ChannelSet,
    prog: ConeProgram,
    layout: Layout,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a SystemConfig, h: &'a ChannelSet) -> Self {
        Builder {
            cfg,
            h,
            prog: ConeProgram::new(),
            layout: Layout {
                pi: vec![None; cfg.g],
                ..Layout::default()
            },
        }
    }

    fn declare(&mut self, s: Sym) -> LinExpr {
        let k = self.prog.add_var(format!("{s:?}"));
        self.layout.map.insert(s, k);
        LinExpr::var(k)
    }

    fn aux(&mut self, name: String) -> usize {
        self.prog.add_var(name)
    }

    /// Masked memberships are the constant 0; any other missing coordinate is
    /// a builder bug.
    fn x(&self, s: Sym) -> LinExpr {
        match self.layout.map.get(&s) {
            Some(&k) => LinExpr::var(k),
            None => match s {
                Sym::Eta(..) => LinExpr::zero(),
                _ => panic!("coordinate {s:?} not declared"),
            },
        }
    }

    fn lin(&self, a: &SymAffine) -> LinExpr {
        let mut e = LinExpr::constant(a.constant);
        for &(s, c) in &a.terms {
            e.add_scaled(&self.x(s), c);
        }
        e.compact()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for i in 0..self.cfg.n {
            for j in 0..self.cfg.g {
                if self.cfg.interested(i, j) {
                    v.push((i, j));
                }
            }
        }
        v
    }

    fn box01(&mut self, e: &LinExpr) {
        self.prog.add_nonneg(e.clone());
        self.prog.add_nonneg(LinExpr::constant(1.0).minus(e));
    }

    /// `η`, `δ`, their boxes, UGC, group capacity and coverage.
    fn assignment_block(&mut self, f: &Formulation) {
        let (n, g) = (self.cfg.n, self.cfg.g);
        for (i, j) in self.pairs() {
            let e = self.declare(Sym::Eta(i, j));
            self.box01(&e);
            if let Some(a) = &f.fixed {
                self.prog.add_eq(e.clone().minus(&LinExpr::constant(a.eta[(i, j)])));
            }
        }
        for j in 0..g {
            let d = self.declare(Sym::Delta(j));
            self.box01(&d);
            if let Some(a) = &f.fixed {
                self.prog.add_eq(d.minus(&LinExpr::constant(a.delta[j])));
            }
        }
        for i in 0..n {
            let mut s = LinExpr::zero();
            for j in 0..g {
                s.add_scaled(&self.x(Sym::Eta(i, j)), 1.0);
            }
            if !s.terms.is_empty() {
                self.prog.add_le(&s, &LinExpr::constant(1.0));
            }
        }
        for j in 0..g {
            let mut s = LinExpr::zero();
            for i in 0..n {
                s.add_scaled(&self.x(Sym::Eta(i, j)), 1.0);
            }
            let d = self.x(Sym::Delta(j));
            self.prog.add_le(&s, &d.clone().scaled(n as f64));
            if f.coverage {
                self.prog.add_le(&d, &s);
            }
            if f.per_user_capacity {
                for i in 0..n {
                    let e = self.x(Sym::Eta(i, j));
                    if !e.terms.is_empty() {
                        self.prog.add_le(&e, &d);
                    }
                }
            }
        }
    }

    fn precoder_block(&mut self) -> Vec<LinExpr> {
        let mut w = Vec::with_capacity(2 * self.cfg.m * self.cfg.g);
        for l in 0..self.cfg.g {
            for k in 0..self.cfg.m {
                w.push(self.declare(Sym::WRe(k, l)));
                w.push(self.declare(Sym::WIm(k, l)));
            }
        }
        let mut rows = vec![LinExpr::constant(self.cfg.p_t.sqrt())];
        rows.extend(w.iter().cloned());
        self.prog.add_cone(crate::cone::Cone::SecondOrder(rows));
        w
    }

    /// `[Re, Im of h_iᴴ w_l for l ≠ j] ++ [σ]`, scaled by `scale`.
    fn interference_vector(&self, i: usize, j: usize, scale: f64) -> Vec<LinExpr> {
        let mut u = Vec::new();
        for l in 0..self.cfg.g {
            if l == j {
                continue;
            }
            let (re, im) = response_forms(self.h, i, l);
            u.push(self.lin(&re).scaled(scale));
            u.push(self.lin(&im).scaled(scale));
        }
        u.push(LinExpr::constant(self.cfg.sigma2.sqrt() * scale));
        u
    }

    /// `‖u‖² ≤ rhs`.
    fn sq_le(&mut self, u: Vec<LinExpr>, rhs: &LinExpr) {
        self.prog.add_cone(lower_quad_over_lin(&u, rhs, &LinExpr::constant(1.0)));
    }

    fn finish(
        self,
        criterion: Option<Criterion>,
        dropped: f64,
        obj_weights: Vec<(Sym, Sym, f64)>,
        p1_args: Vec<SymAffine>,
    ) -> Subproblem {
        Subproblem {
            criterion,
            program: self.prog,
            layout: self.layout,
            dropped,
            obj_weights,
            p1_args,
            p1: self.cfg.power_fn.p1,
            m: self.cfg.m,
            dims: (self.cfg.m, self.cfg.n, self.cfg.g),
        }
    }
}

fn check_inputs(cfg: &SystemConfig, h: &ChannelSet, ep: &ExpansionPoint, pen: &PenaltyState) -> Result<()> {
    cfg.validate()?;
    h.check_against(cfg)?;
    ep.check_dims(cfg)?;
    pen.validate()
}

/// Entropy penalties on every free membership and scheduling variable.
fn entropy_terms(
    b: &Builder,
    f: &Formulation,
    ep: &ExpansionPoint,
    l_eta: f64,
    l_delta: f64,
    obj: &mut SymAffine,
) -> f64 {
    if f.fixed.is_some() {
        return 0.0;
    }
    let mut dropped = 0.0;
    if l_eta > 0.0 {
        for (i, j) in b.pairs() {
            let t = taylor_entropy(Sym::Eta(i, j), ep.eta[(i, j)]);
            obj.add_scaled(&t.expr, l_eta);
            dropped += l_eta * t.dropped;
        }
    }
    if l_delta > 0.0 {
        for j in 0..b.cfg.g {
            let t = taylor_entropy(Sym::Delta(j), ep.delta[j]);
            obj.add_scaled(&t.expr, l_delta);
            dropped += l_delta * t.dropped;
        }
    }
    dropped
}

/// Adds `q ≥ (Σδ − M)²` and returns the column of `q`.
fn group_count_penalty(b: &mut Builder) -> usize {
    let q = b.aux("q".into());
    b.layout.q = Some(q);
    let mut dev = LinExpr::constant(-(b.cfg.m as f64));
    for j in 0..b.cfg.g {
        dev.add_scaled(&b.x(Sym::Delta(j)), 1.0);
    }
    b.sq_le(vec![dev], &LinExpr::var(q));
    q
}

/// Shared rate machinery of MEE and EE: `Θ`, `α`, `t`, interference (C5),
/// rate link (C7) and QoS (C8).
fn rate_block(b: &mut Builder, ep: &ExpansionPoint) {
    let g = b.cfg.g;
    for j in 0..g {
        let th = b.declare(Sym::Theta(j));
        b.prog.add_nonneg(th.clone());
        let qos = th.minus(&b.x(Sym::Delta(j)).scaled(b.cfg.eps[j]));
        b.prog.add_nonneg(qos);
    }
    let t = b.declare(Sym::T);
    b.prog.add_nonneg(t);
    for (i, j) in b.pairs() {
        let a = b.declare(Sym::Alpha(i, j));
        b.prog.add_nonneg(a.clone().minus(&LinExpr::constant(1.0)));
        let ell = b.aux(format!("ell({i},{j})"));
        b.layout.ell.insert((i, j), ell);
        b.prog.add_cone(lower_log_lb(&a, &LinExpr::var(ell)));

        let jt = b.lin(&taylor_j(ep, b.cfg, b.h, i, j));
        let u = b.interference_vector(i, j, 1.0);
        b.sq_le(u, &jt);

        let sum = b.x(Sym::Eta(i, j)).plus(&b.x(Sym::Theta(j)));
        let rhs = LinExpr::term(ell, 2.0 / LN_2).plus(&b.lin(&taylor_g(ep, i, j)));
        b.sq_le(vec![sum], &rhs);
    }
}

/// `P0 + Σ_j(‖w_j‖²/ρ + Π(p1(arg_j) − p̃2(arg_j))) ≤ t`.
fn power_block(b: &mut Builder, w: &[LinExpr], args: &[SymAffine], arg0: &[f64]) -> Result<()> {
    let cfg = b.cfg;
    let mut budget = b.x(Sym::T).minus(&LinExpr::constant(cfg.p0));
    for j in 0..cfg.g {
        let arg = b.lin(&args[j]);
        let p1 = &cfg.power_fn.p1;
        let pi_col = match *p1 {
            ConvexTerm::Zero => None,
            ConvexTerm::Quadratic { a, b: lin } => {
                let k = b.aux(format!("pi({j})"));
                let pi = LinExpr::var(k);
                if a > 0.0 {
                    let rhs = pi.clone().minus(&arg.clone().scaled(lin));
                    b.prog
                        .add_cone(lower_quad_over_lin(std::slice::from_ref(&arg), &rhs, &LinExpr::constant(1.0 / a)));
                } else {
                    b.prog.add_le(&arg.clone().scaled(lin), &pi);
                }
                Some(k)
            }
            ConvexTerm::Exponential { c } => {
                let k = b.aux(format!("pi({j})"));
                let pi1 = LinExpr::var(k).plus(&LinExpr::constant(1.0));
                b.prog.add_cone(lower_log_lb(&pi1, &arg.clone().scaled(c)));
                Some(k)
            }
            ConvexTerm::Power { .. } => {
                return Err(Error::Unsupported(
                    "p1 must be zero, quadratic or exponential to have a conic epigraph".into(),
                ))
            }
        };
        b.layout.pi[j] = pi_col;
        if let Some(k) = pi_col {
            budget.add_scaled(&LinExpr::var(k), -cfg.pi_coeff);
        }
        let p2 = taylor_p2(&cfg.power_fn.p2, arg0[j], &args[j]);
        budget.add_scaled(&b.lin(&p2), cfg.pi_coeff);
    }
    b.prog
        .add_cone(lower_quad_over_lin(w, &budget.compact(), &LinExpr::constant(cfg.rho)));
    Ok(())
}

/// MEE subproblem around `ep`.
pub fn build_mee_subproblem(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    ep: &ExpansionPoint,
    pen: &PenaltyState,
) -> Result<Subproblem> {
    check_inputs(cfg, h, ep, pen)?;
    let mut b = Builder::new(cfg, h);
    let w = b.precoder_block();
    b.assignment_block(f);
    rate_block(&mut b, ep);

    // ζ_j ≥ B·δ_j·Θ_j, as (δ+Θ)² ≤ 2ζ/B + tangent(δ² + Θ²).
    let mut args = Vec::with_capacity(cfg.g);
    let mut arg0 = Vec::with_capacity(cfg.g);
    for j in 0..cfg.g {
        let z = b.declare(Sym::Zeta(j));
        b.prog.add_nonneg(z.clone());
        let sum = b.x(Sym::Delta(j)).plus(&b.x(Sym::Theta(j)));
        let tan = taylor_sum_sq(Sym::Delta(j), ep.delta[j], Sym::Theta(j), ep.theta[j]);
        let rhs = z.scaled(2.0 / cfg.bandwidth).plus(&b.lin(&tan));
        b.sq_le(vec![sum], &rhs);
        args.push(SymAffine::sym(Sym::Zeta(j)));
        arg0.push(ep.zeta[j]);
    }
    power_block(&mut b, &w, &args, &arg0)?;

    let (l_eta, l_delta, omega) = pen.for_criterion(Criterion::Mee);
    let mut obj = SymAffine::default();
    let mut weights = Vec::new();
    for (i, j) in b.pairs() {
        let fs = taylor_f(ep, cfg, i, j);
        obj.add_scaled(&fs.linear, 1.0);
        weights.push((fs.eta, fs.theta, fs.weight));
    }
    let dropped = entropy_terms(&b, f, ep, l_eta, l_delta, &mut obj);
    let mut objective = b.lin(&obj).scaled(-1.0);
    if !weights.is_empty() {
        let s = b.aux("s_obj".into());
        b.layout.s_obj = Some(s);
        let v: Vec<LinExpr> = weights
            .iter()
            .flat_map(|&(e, th, wt)| [b.x(e).scaled(wt.sqrt()), b.x(th).scaled(wt.sqrt())])
            .collect();
        b.prog.add_cone(lower_quad_over_lin(&v, &b.x(Sym::T), &LinExpr::var(s)));
        objective.push(s, 1.0);
    }
    if omega > 0.0 && f.fixed.is_none() {
        let q = group_count_penalty(&mut b);
        objective.push(q, omega);
    }
    b.prog.objective = objective;
    Ok(b.finish(Some(Criterion::Mee), dropped, weights, args))
}

/// EE subproblem around `ep`.
pub fn build_ee_subproblem(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    ep: &ExpansionPoint,
    pen: &PenaltyState,
) -> Result<Subproblem> {
    check_inputs(cfg, h, ep, pen)?;
    if !(f.theta_star > 0.0 && f.theta_star.is_finite()) {
        return Err(Error::config("theta_star", "must be positive"));
    }
    let mut b = Builder::new(cfg, h);
    let w = b.precoder_block();
    b.assignment_block(f);
    rate_block(&mut b, ep);

    let mut args = Vec::with_capacity(cfg.g);
    let mut arg0 = Vec::with_capacity(cfg.g);
    let mut tput = LinExpr::zero();
    for j in 0..cfg.g {
        let th = b.x(Sym::Theta(j));
        b.prog.add_le(&th, &b.x(Sym::Delta(j)).scaled(f.theta_star));
        tput.add_scaled(&th, cfg.bandwidth * cfg.psi[j]);
        let mut a = SymAffine::default();
        a.push(Sym::Theta(j), cfg.bandwidth);
        args.push(a);
        arg0.push(cfg.bandwidth * ep.theta[j]);
    }
    power_block(&mut b, &w, &args, &arg0)?;
    let gamma = b.declare(Sym::Gamma);
    b.prog.add_nonneg(gamma.clone());
    b.sq_le(vec![gamma], &tput);

    let (l_eta, l_delta, omega) = pen.for_criterion(Criterion::Ee);
    let mut obj = taylor_gamma_sq(ep);
    let dropped = entropy_terms(&b, f, ep, l_eta, l_delta, &mut obj);
    let mut objective = b.lin(&obj).scaled(-1.0);
    if omega > 0.0 && f.fixed.is_none() {
        let q = group_count_penalty(&mut b);
        objective.push(q, omega);
    }
    b.prog.objective = objective;
    Ok(b.finish(Some(Criterion::Ee), dropped, Vec::new(), args))
}

/// SUM subproblem around `ep`. The rate threshold enters through the SINR
/// threshold `τ_j = 2^ε_j − 1`.
pub fn build_sum_subproblem(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    ep: &ExpansionPoint,
    pen: &PenaltyState,
) -> Result<Subproblem> {
    check_inputs(cfg, h, ep, pen)?;
    let mut b = Builder::new(cfg, h);
    b.precoder_block();
    b.assignment_block(f);
    for (i, j) in b.pairs() {
        let tau = cfg.sinr_threshold(j);
        let it = b.lin(&taylor_i(ep, cfg, h, i, j, tau));
        let u = b.interference_vector(i, j, 1.0);
        b.sq_le(u, &it);
    }
    let (l_eta, l_delta, omega) = pen.for_criterion(Criterion::Sum);
    let mut obj = SymAffine::default();
    for (i, j) in b.pairs() {
        obj.push(Sym::Eta(i, j), 1.0);
    }
    let dropped = entropy_terms(&b, f, ep, l_eta, l_delta, &mut obj);
    let mut objective = b.lin(&obj).scaled(-1.0);
    if omega > 0.0 && f.fixed.is_none() {
        let q = group_count_penalty(&mut b);
        objective.push(q, omega);
    }
    b.prog.objective = objective;
    Ok(b.finish(Some(Criterion::Sum), dropped, Vec::new(), Vec::new()))
}

pub fn build_subproblem(
    cfg: &SystemConfig,
    h: &ChannelSet,
    f: &Formulation,
    ep: &ExpansionPoint,
    pen: &PenaltyState,
) -> Result<Subproblem> {
    match f.criterion {
        Criterion::Mee => build_mee_subproblem(cfg, h, f, ep, pen),
        Criterion::Ee => build_ee_subproblem(cfg, h, f, ep, pen),
        Criterion::Sum => build_sum_subproblem(cfg, h, f, ep, pen),
    }
}

/// Penalized DC objective that the surrogate objective approximates.
pub fn dc_objective(cfg: &SystemConfig, f: &Formulation, st: &IterateState, pen: &PenaltyState) -> f64 {
    let (l_eta, l_delta, omega) = pen.for_criterion(f.criterion);
    let mut v = 0.0;
    for i in 0..cfg.n {
        for j in 0..cfg.g {
            if !cfg.interested(i, j) {
                continue;
            }
            let e = st.eta[(i, j)];
            v += match f.criterion {
                Criterion::Mee => f_exact(cfg.bandwidth, cfg.psi[j], e, st.theta[j], st.t),
                Criterion::Ee => 0.0,
                Criterion::Sum => e,
            };
            if f.fixed.is_none() {
                v += l_eta * entropy(e);
            }
        }
    }
    if f.criterion == Criterion::Ee {
        v += st.gamma * st.gamma / st.t;
    }
    if f.fixed.is_none() {
        v += l_delta * st.delta.iter().map(|&d| entropy(d)).sum::<f64>();
        if omega > 0.0 {
            v -= omega * (st.delta.iter().sum::<f64>() - cfg.m as f64).powi(2);
        }
    }
    v
}

/// LP over `(η, δ)` maximizing `Σδ + Ση` for a fixed precoder, with the
/// membership cap `η_ij·τ_j ≤ γ_ij(W0)`.
pub fn build_fip_lp(cfg: &SystemConfig, h: &ChannelSet, w0: &PrecoderMatrix, coverage: bool) -> Result<Subproblem> {
    cfg.validate()?;
    h.check_against(cfg)?;
    if w0.power() > cfg.p_t * (1.0 + 1e-9) {
        return Err(Error::config("W0", "initial precoder exceeds the power budget"));
    }
    let f = Formulation {
        criterion: Criterion::Sum,
        coverage,
        per_user_capacity: false,
        theta_star: 0.0,
        fixed: None,
    };
    let mut b = Builder::new(cfg, h);
    b.assignment_block(&f);
    for (i, j) in b.pairs() {
        let tau = cfg.sinr_threshold(j);
        let gamma0 = sinr(h, w0, i, j, cfg.sigma2);
        if tau > 0.0 {
            b.prog
                .add_le(&b.x(Sym::Eta(i, j)).scaled(tau), &LinExpr::constant(gamma0));
        }
    }
    let mut obj = LinExpr::zero();
    for s in b.layout.map.keys() {
        obj.push(b.layout.map[s], -1.0);
    }
    b.prog.objective = obj;
    Ok(b.finish(None, 0.0, Vec::new(), Vec::new()))
}

/// Phase-one program for a fixed assignment: minimize total slack `Σ s_ij`
/// subject to `τ_j(Σ_{l≠j}|h_iᴴw_l|² + σ²) ≤ lin(|h_iᴴw_j|²) + s_ij` for every
/// scheduled member and the power budget, linearized at `w0`.
pub fn build_qos_feasibility(
    cfg: &SystemConfig,
    h: &ChannelSet,
    a: &AssignmentState,
    w0: &PrecoderMatrix,
) -> Result<(Subproblem, Vec<usize>)> {
    cfg.validate()?;
    h.check_against(cfg)?;
    let mut b = Builder::new(cfg, h);
    b.precoder_block();
    let mut slacks = Vec::new();
    let mut st0 = IterateState::zeros(cfg.m, cfg.n, cfg.g);
    st0.w = w0.clone();
    let mut obj = LinExpr::zero();
    for j in 0..cfg.g {
        let tau = cfg.sinr_threshold(j);
        if tau <= 0.0 {
            continue;
        }
        for i in a.members(j) {
            let s = b.aux(format!("slack({i},{j})"));
            slacks.push(s);
            b.prog.add_nonneg(LinExpr::var(s));
            obj.push(s, 1.0);
            let (re, im) = response_forms(h, i, j);
            let (zr, zi) = (re.eval(&st0), im.eval(&st0));
            let mut lin = b.lin(&re).scaled(2.0 * zr).plus(&b.lin(&im).scaled(2.0 * zi));
            lin.add_constant(-(zr * zr + zi * zi));
            lin.push(s, 1.0);
            let u = b.interference_vector(i, j, tau.sqrt());
            b.sq_le(u, &lin);
        }
    }
    b.prog.objective = obj;
    Ok((b.finish(None, 0.0, Vec::new(), Vec::new()), slacks))
}
