//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use mgmc_core::cone::{lower_quad_over_lin, Cone, ConeProgram, LinExpr};
use mgmc_core::state::{ExpansionPoint, IterateState, Sym, SymAffine};
use mgmc_core::surrogate::*;
use mgmc_core::system::{ChannelSet, ConvexTerm, SystemConfig};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every coordinate drawn inside its box: `α ≥ 1`, `t > 0`, `η, δ ∈ [0, 1]`.
pub fn random_state(rng: &mut ChaCha8Rng, m: usize, n: usize, g: usize) -> IterateState {
    let mut st = IterateState::zeros(m, n, g);
    for z in st.w.w.iter_mut() {
        *z = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    }
    for v in st.eta.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    for v in st.alpha.iter_mut() {
        *v = rng.random_range(1.0..20.0);
    }
    for j in 0..g {
        st.delta[j] = rng.random_range(0.0..1.0);
        st.theta[j] = rng.random_range(0.0..6.0);
        st.zeta[j] = rng.random_range(0.0..6.0);
    }
    st.t = rng.random_range(0.1..100.0);
    st.gamma = rng.random_range(0.0..5.0);
    st
}

/// `st` with every coordinate moved by up to `scale` times its box size,
/// then clipped back into the box.
pub fn perturb(rng: &mut ChaCha8Rng, st: &IterateState, scale: f64) -> IterateState {
    let mut p = st.clone();
    let mut jitter = |v: f64, width: f64| v + scale * width * rng.random_range(-1.0..1.0);
    for z in p.w.w.iter_mut() {
        *z = Complex64::new(jitter(z.re, 4.0), jitter(z.im, 4.0));
    }
    for v in p.eta.iter_mut() {
        *v = jitter(*v, 1.0).clamp(0.0, 1.0);
    }
    for v in p.alpha.iter_mut() {
        *v = jitter(*v, 19.0).max(1.0);
    }
    for j in 0..p.delta.len() {
        p.delta[j] = jitter(p.delta[j], 1.0).clamp(0.0, 1.0);
        p.theta[j] = jitter(p.theta[j], 6.0).max(0.0);
        p.zeta[j] = jitter(p.zeta[j], 6.0).max(0.0);
    }
    p.t = jitter(p.t, 100.0).max(0.1);
    p.gamma = jitter(p.gamma, 5.0).max(0.0);
    p
}

/// `(exact at point, surrogate at point)` for every surrogate family.
pub fn families(st: &IterateState, ep: &ExpansionPoint, cfg: &SystemConfig, h: &ChannelSet) -> Vec<(&'static str, f64, f64)> {
    let p2 = ConvexTerm::Quadratic { a: 0.7, b: 0.2 };
    let zeta = SymAffine::sym(Sym::Zeta(1));
    let tau = cfg.sinr_threshold(1);
    let ent = taylor_entropy(Sym::Eta(1, 1), ep.eta[(1, 1)]);
    vec![
        ("entropy", entropy(st.eta[(1, 1)]), ent.expr.eval(st) + ent.dropped),
        (
            "f",
            f_exact(cfg.bandwidth, cfg.psi[0], st.eta[(2, 0)], st.theta[0], st.t),
            taylor_f(ep, cfg, 2, 0).eval(st),
        ),
        ("J", j_exact(h, &st.w, st.alpha[(0, 1)], 0, cfg.sigma2), taylor_j(ep, cfg, h, 0, 1).eval(st)),
        ("G", st.eta[(1, 0)].powi(2) + st.theta[0].powi(2), taylor_g(ep, 1, 0).eval(st)),
        ("K", (st.delta[1] + st.theta[1]).powi(2), taylor_k(ep, 1).eval(st)),
        ("p2", p2.value(st.zeta[1]), taylor_p2(&p2, ep.zeta[1], &zeta).eval(st)),
        ("I", i_exact(h, &st.w, st.eta[(1, 1)], tau, 1, cfg.sigma2), taylor_i(ep, cfg, h, 1, 1, tau).eval(st)),
        ("gamma", st.gamma * st.gamma / st.t, taylor_gamma_sq(ep).eval(st)),
    ]
}

/// `minimize cᵀx` s.t. `Ax ≤ b`, `0 ≤ x ≤ u`.
#[derive(Clone, Debug)]
pub struct BoxLp {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub u: f64,
}

/// A feasible, bounded LP: the box keeps it bounded and `b` is chosen so
/// that a random interior point satisfies every row with slack.
pub fn random_lp(rng: &mut ChaCha8Rng) -> BoxLp {
    let n = rng.random_range(1..=4);
    let rows = rng.random_range(1..=6);
    let u = rng.random_range(1.0..5.0);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9) * u).collect();
    let a: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let b = a
        .iter()
        .map(|r| r.iter().zip(&x0).map(|(p, q)| p * q).sum::<f64>() + rng.random_range(0.1..2.0))
        .collect();
    let c = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    BoxLp { c, a, b, u }
}

impl BoxLp {
    pub fn to_program(&self) -> ConeProgram {
        let n = self.c.len();
        let mut p = ConeProgram::new();
        let x: Vec<usize> = (0..n).map(|k| p.add_var(format!("x{k}"))).collect();
        let mut obj = LinExpr::zero();
        for k in 0..n {
            obj.push(x[k], self.c[k]);
        }
        p.objective = obj;
        for (row, &bi) in self.a.iter().zip(&self.b) {
            let mut e = LinExpr::constant(bi);
            for k in 0..n {
                e.push(x[k], -row[k]);
            }
            p.add_nonneg(e);
        }
        for &k in &x {
            p.add_nonneg(LinExpr::var(k));
            p.add_nonneg(LinExpr::constant(self.u).minus(&LinExpr::var(k)));
        }
        p
    }

    /// Rows `gᵀx ≤ h` of the full system including the box.
    fn all_rows(&self) -> Vec<(Vec<f64>, f64)> {
        let n = self.c.len();
        let mut rows: Vec<(Vec<f64>, f64)> = self.a.iter().cloned().zip(self.b.iter().copied()).collect();
        for k in 0..n {
            let mut lo = vec![0.0; n];
            lo[k] = -1.0;
            rows.push((lo, 0.0));
            let mut hi = vec![0.0; n];
            hi[k] = 1.0;
            rows.push((hi, self.u));
        }
        rows
    }

    /// Minimum over every basic feasible point, found by solving each
    /// `n × n` subsystem of active rows.
    pub fn vertex_enumeration(&self) -> f64 {
        let n = self.c.len();
        let rows = self.all_rows();
        let mut best = f64::INFINITY;
        for_each_subset(rows.len(), n, &mut |idx| {
            let g = DMatrix::from_fn(n, n, |r, k| rows[idx[r]].0[k]);
            let h = DVector::from_fn(n, |r, _| rows[idx[r]].1);
            let Some(x) = g.lu().solve(&h) else { return };
            if x.iter().any(|v| !v.is_finite()) {
                return;
            }
            let feasible = rows
                .iter()
                .all(|(gr, hr)| gr.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= hr + 1e-9);
            if feasible {
                let v: f64 = self.c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                best = best.min(v);
            }
        });
        best
    }
}

fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// `minimize cᵀx` s.t. `‖x − x0‖ ≤ r` and `aᵀx ≤ β`, with the halfspace
/// cutting through the ball interior.
#[derive(Clone, Debug)]
pub struct BallCut {
    pub c: Vec<f64>,
    pub x0: Vec<f64>,
    pub r: f64,
    pub a: Vec<f64>,
    pub beta: f64,
}

fn dot(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * b).sum()
}

fn norm(p: &[f64]) -> f64 {
    dot(p, p).sqrt()
}

pub fn random_ball_cut(rng: &mut ChaCha8Rng) -> BallCut {
    let n = rng.random_range(1..=5);
    let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let c = v(rng);
    let x0 = v(rng);
    let a = v(rng);
    let r = rng.random_range(0.5..3.0);
    // β ∈ aᵀx0 + ‖a‖r·(−0.8, 1.5): Slater holds, and sometimes the cut is slack.
    let beta = dot(&a, &x0) + norm(&a) * r * rng.random_range(-0.8..1.5);
    BallCut { c, x0, r, a, beta }
}

impl BallCut {
    pub fn to_program(&self) -> ConeProgram {
        let n = self.c.len();
        let mut p = ConeProgram::new();
        let x: Vec<usize> = (0..n).map(|k| p.add_var(format!("x{k}"))).collect();
        let mut obj = LinExpr::zero();
        let mut cut = LinExpr::constant(self.beta);
        for k in 0..n {
            obj.push(x[k], self.c[k]);
            cut.push(x[k], -self.a[k]);
        }
        p.objective = obj;
        p.add_nonneg(cut);
        let mut rows = vec![LinExpr::constant(self.r)];
        rows.extend((0..n).map(|k| LinExpr::var(x[k]).minus(&LinExpr::constant(self.x0[k]))));
        p.add_cone(Cone::SecondOrder(rows));
        p
    }

    /// Dual value `max_{μ≥0} (c+μa)ᵀx0 − r‖c+μa‖ − μβ`, maximized by
    /// bisection on the derivative of this concave function of `μ`.
    pub fn dual_bisection(&self) -> f64 {
        let q = |mu: f64| -> f64 {
            let v: Vec<f64> = self.c.iter().zip(&self.a).map(|(c, a)| c + mu * a).collect();
            dot(&v, &self.x0) - self.r * norm(&v) - mu * self.beta
        };
        let slope = |mu: f64| (q(mu + 1e-7) - q(mu - 1e-7)) / 2e-7;
        if slope(1e-6) <= 0.0 {
            return q(0.0);
        }
        let mut hi = 1.0;
        while slope(hi) > 0.0 {
            hi *= 2.0;
            assert!(hi < 1e12, "dual unbounded: primal infeasible");
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The maximum of a concave function is flat: sample the bracket.
        (0..=20).map(|k| q(lo + (hi - lo) * k as f64 / 20.0)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `minimize s` subject to `u² ≤ s·t` with `u`, `t` fixed.
pub fn quad_over_lin_program(u: f64, t: f64) -> ConeProgram {
    let mut p = ConeProgram::new();
    let s = p.add_var("s");
    p.objective = LinExpr::var(s);
    p.add_cone(lower_quad_over_lin(&[LinExpr::constant(u)], &LinExpr::constant(t), &LinExpr::var(s)));
    p
}
