//! Convex cone programs over nonnegative, second-order and exponential cones.
//!
//! A [`ConeProgram`] is stated in affine-row form: every cone entry is an
//! affine expression of the decision vector `x`, and every equality is an
//! affine expression required to vanish. [`solve`] lowers the program to the
//! Clarabel interior-point solver and then re-derives the primal, dual and gap
//! residuals from the returned iterates, independently of the solver's own
//! bookkeeping. A solution is reported `Optimal` only when those recomputed
//! residuals meet the acceptance contract.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative residual bound every `Optimal` solution satisfies.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// Sparse affine expression `Σ coeff·x[index] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        LinExpr {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(index: usize, coeff: f64) -> Self {
        LinExpr {
            terms: vec![(index, coeff)],
            constant: 0.0,
        }
    }

    pub fn push(&mut self, index: usize, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((index, coeff));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for &(i, c) in &other.terms {
            self.push(i, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &LinExpr) -> Self {
        self.add_scaled(other, -1.0);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Sums repeated indices and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }
}

/// One cone constraint on a tuple of affine expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cone", content = "rows", rename_all = "snake_case")]
pub enum Cone {
    /// Every entry is nonnegative.
    Nonnegative(Vec<LinExpr>),
    /// `[t; u]` with `‖u‖ ≤ t`.
    SecondOrder(Vec<LinExpr>),
    /// `(a, b, c)` with `b·exp(a/b) ≤ c`, `b > 0`, or its closure.
    Exponential([LinExpr; 3]),
}

impl Cone {
    pub fn rows(&self) -> &[LinExpr] {
        match self {
            Cone::Nonnegative(r) | Cone::SecondOrder(r) => r,
            Cone::Exponential(r) => r,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows().len()
    }

    /// Distance-like measure of how far `s` lies outside this cone.
    pub fn violation(&self, s: &[f64]) -> f64 {
        match self {
            Cone::Nonnegative(_) => s.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max),
            Cone::SecondOrder(_) => (norm2(&s[1..]) - s[0]).max(0.0),
            Cone::Exponential(_) => exp_cone_violation(s[0], s[1], s[2]),
        }
    }

    /// Same measure for the dual cone.
    pub fn dual_violation(&self, z: &[f64]) -> f64 {
        match self {
            Cone::Nonnegative(_) | Cone::SecondOrder(_) => self.violation(z),
            Cone::Exponential(_) => exp_dual_violation(z[0], z[1], z[2]),
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Violation of `b·exp(a/b) ≤ c`, accepting the `b = 0, a ≤ 0, c ≥ 0` face.
pub fn exp_cone_violation(a: f64, b: f64, c: f64) -> f64 {
    let face = a.max(0.0).max(-c).max(b.abs());
    let interior = if b > 0.0 && c > 0.0 {
        (a - b * (c / b).ln()).max(0.0)
    } else if b > 0.0 {
        (b * (a / b).exp() - c).max(0.0)
    } else {
        f64::INFINITY
    };
    face.min(interior)
}

/// Violation of the dual exponential cone `−u·exp(v/u − 1) ≤ w, u < 0`,
/// accepting the `u = 0, v ≥ 0, w ≥ 0` face.
pub fn exp_dual_violation(u: f64, v: f64, w: f64) -> f64 {
    let face = u.abs().max(-v).max(-w).max(0.0);
    let interior = if u < 0.0 && w > 0.0 {
        (u * (1.0 + (w / -u).ln()) - v).max(0.0)
    } else if u < 0.0 {
        (-u * (v / u - 1.0).exp() - w).max(0.0)
    } else {
        f64::INFINITY
    };
    face.min(interior)
}

/// `minimize objective(x)` subject to `equalities(x) = 0` and every cone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConeProgram {
    pub num_vars: usize,
    pub objective: LinExpr,
    pub equalities: Vec<LinExpr>,
    pub cones: Vec<Cone>,
    pub var_names: Vec<String>,
}

impl ConeProgram {
    pub fn new() -> Self {
        ConeProgram::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_eq(&mut self, e: LinExpr) {
        self.equalities.push(e);
    }

    /// `e ≥ 0`.
    pub fn add_nonneg(&mut self, e: LinExpr) {
        if let Some(Cone::Nonnegative(rows)) = self.cones.last_mut() {
            rows.push(e);
        } else {
            self.cones.push(Cone::Nonnegative(vec![e]));
        }
    }

    /// `lhs ≤ rhs`.
    pub fn add_le(&mut self, lhs: &LinExpr, rhs: &LinExpr) {
        self.add_nonneg(rhs.clone().minus(lhs));
    }

    pub fn add_cone(&mut self, cone: Cone) {
        self.cones.push(cone);
    }

    pub fn num_rows(&self) -> usize {
        self.equalities.len() + self.cones.iter().map(Cone::dim).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.var_names.len() != self.num_vars {
            return Err(Error::MalformedProgram("variable name map does not match num_vars".into()));
        }
        if self.cones.is_empty() && self.equalities.is_empty() {
            return Err(Error::MalformedProgram("no cones or equalities".into()));
        }
        let exprs = std::iter::once(&self.objective)
            .chain(self.equalities.iter())
            .chain(self.cones.iter().flat_map(|c| c.rows().iter()));
        for e in exprs {
            if !e.constant.is_finite() {
                return Err(Error::MalformedProgram("non-finite constant".into()));
            }
            for &(i, c) in &e.terms {
                if i >= self.num_vars {
                    return Err(Error::MalformedProgram(format!("variable index {i} out of range")));
                }
                if !c.is_finite() {
                    return Err(Error::MalformedProgram(format!(
                        "non-finite coefficient on `{}`",
                        self.var_names[i]
                    )));
                }
            }
        }
        for c in &self.cones {
            match c {
                Cone::SecondOrder(r) if r.is_empty() => {
                    return Err(Error::MalformedProgram("empty second-order cone".into()))
                }
                Cone::Nonnegative(r) if r.is_empty() => {
                    return Err(Error::MalformedProgram("empty nonnegative cone".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Largest equality or cone violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| e.eval(x).abs()).fold(0.0, f64::max);
        let cone = self
            .cones
            .iter()
            .map(|c| {
                let s: Vec<f64> = c.rows().iter().map(|e| e.eval(x)).collect();
                c.violation(&s)
            })
            .fold(0.0, f64::max);
        eq.max(cone)
    }

    /// Index of a variable by name (linear scan; intended for tests and dumps).
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|n| n == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest equality / cone violation of `x`, relative to `1 + ‖b‖∞`.
    pub primal: f64,
    /// `‖c − Σ z_k a_k‖∞` plus dual-cone violation, relative to `1 + ‖c‖∞`.
    pub dual: f64,
    /// `|cᵀx − dual objective| / (1 + |cᵀx|)`.
    pub gap: f64,
}

impl Residuals {
    pub fn within_contract(&self) -> bool {
        self.primal <= RESIDUAL_TOL && self.dual <= RESIDUAL_TOL && self.gap <= RESIDUAL_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    /// Dual multipliers, one per row (equalities first, then cones in order).
    pub y: Vec<f64>,
    pub status: ConicStatus,
    pub residuals: Residuals,
    /// Primal objective including its constant.
    pub objective: f64,
    pub iterations: u32,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iter: u32,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// Solves `p`. The warm start is accepted for interface compatibility;
/// the interior-point backend always starts from its own central point, so
/// the accepted-solution contract never depends on it.
pub fn solve(p: &ConeProgram, warm_start: Option<&ConicSolution>) -> Result<ConicSolution> {
    solve_with(p, warm_start, &SolverOptions::default())
}

pub fn solve_with(p: &ConeProgram, _warm_start: Option<&ConicSolution>, opts: &SolverOptions) -> Result<ConicSolution> {
    p.validate()?;
    let n = p.num_vars;

    // Row k encodes s_k = a_k·x + c_k, i.e. (−a_k)·x + s_k = c_k.
    let mut rows: Vec<&LinExpr> = Vec::with_capacity(p.num_rows());
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if !p.equalities.is_empty() {
        rows.extend(p.equalities.iter());
        cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
    }
    for c in &p.cones {
        rows.extend(c.rows().iter());
        cones.push(match c {
            Cone::Nonnegative(r) => SupportedConeT::NonnegativeConeT(r.len()),
            Cone::SecondOrder(r) => SupportedConeT::SecondOrderConeT(r.len()),
            Cone::Exponential(_) => SupportedConeT::ExponentialConeT(),
        });
    }
    let m = rows.len();
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(m);
    for (k, e) in rows.iter().enumerate() {
        for &(j, c) in &e.terms {
            ii.push(k);
            jj.push(j);
            vv.push(-c);
        }
        b.push(e.constant);
    }
    let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
    let mut q = vec![0.0; n];
    for &(j, c) in &p.objective.terms {
        q[j] += c;
    }
    let pmat = CscMatrix::zeros((n, n));
    let base = DefaultSettings {
        verbose: false,
        max_iter: opts.max_iter,
        tol_gap_abs: opts.tol,
        tol_gap_rel: opts.tol,
        tol_feas: opts.tol,
        presolve_enable: false,
        ..DefaultSettings::default()
    };
    // Retried once with heavier linear-algebra settings when the first answer
    // misses the residual contract.
    let careful = DefaultSettings {
        max_iter: 2 * opts.max_iter,
        static_regularization_constant: 1e-10,
        iterative_refinement_reltol: 1e-15,
        iterative_refinement_abstol: 1e-15,
        iterative_refinement_max_iter: 50,
        equilibrate_max_iter: 50,
        ..base.clone()
    };
    let mut out = None;
    for settings in [base, careful] {
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::MalformedProgram(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let x = sol.x.clone();
        let y = sol.z.clone();
        let residuals = residuals(p, &q, &rows, &x, &y);
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress
                if residuals.within_contract() =>
            {
                ConicStatus::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => ConicStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => ConicStatus::MaxIter,
            _ => ConicStatus::NumericalFailure,
        };
        let done = status == ConicStatus::Optimal;
        out = Some(ConicSolution {
            objective: p.objective.eval(&x),
            x,
            y,
            status,
            residuals,
            iterations: sol.iterations,
        });
        if done {
            break;
        }
    }
    Ok(out.expect("at least one attempt"))
}

fn residuals(p: &ConeProgram, q: &[f64], rows: &[&LinExpr], x: &[f64], z: &[f64]) -> Residuals {
    if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
        return Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            gap: f64::INFINITY,
        };
    }
    let b_norm = rows.iter().map(|e| e.constant.abs()).fold(0.0, f64::max);
    let c_norm = q.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let primal = p.max_violation(x) / (1.0 + b_norm);

    // Stationarity: q − Σ_k z_k a_k = 0.
    let mut station = q.to_vec();
    for (k, e) in rows.iter().enumerate() {
        for &(j, c) in &e.terms {
            station[j] -= z[k] * c;
        }
    }
    let mut dual_cone = 0.0f64;
    let mut offset = p.equalities.len();
    for c in &p.cones {
        let d = c.dim();
        dual_cone = dual_cone.max(c.dual_violation(&z[offset..offset + d]));
        offset += d;
    }
    let dual = station.iter().map(|v| v.abs()).fold(0.0, f64::max).max(dual_cone) / (1.0 + c_norm);

    // Dual objective of min qᵀx s.t. s = b − A x ∈ K is −bᵀz, with b_k = c_k.
    let primal_obj: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
    let dual_obj: f64 = -rows.iter().zip(z).map(|(e, zk)| e.constant * zk).sum::<f64>();
    let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
    Residuals { primal, dual, gap }
}

/// Rotated-cone encoding of `‖u‖² ≤ t·s` (with `t, s ≥ 0`) as
/// `‖[2u; t − s]‖ ≤ t + s`.
pub fn lower_quad_over_lin(u: &[LinExpr], t: &LinExpr, s: &LinExpr) -> Cone {
    let mut rows = Vec::with_capacity(u.len() + 2);
    rows.push(t.clone().plus(s));
    rows.push(t.clone().minus(s));
    rows.extend(u.iter().map(|e| e.clone().scaled(2.0)));
    Cone::SecondOrder(rows)
}

/// Encodes `ln(alpha) ≥ beta` as `(beta, 1, alpha) ∈ K_exp`.
pub fn lower_log_lb(alpha: &LinExpr, beta: &LinExpr) -> Cone {
    Cone::Exponential([beta.clone(), LinExpr::constant(1.0), alpha.clone()])
}
