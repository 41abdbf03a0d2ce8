//! Optimization variables of one CCP iterate and symbolic affine forms over
//! their real embedding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{AssignmentState, ChannelSet, PrecoderMatrix, SystemConfig};

/// Every decision variable of the MEE / EE / SUM formulations.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub w: PrecoderMatrix,
    pub eta: DMatrix<f64>,
    pub delta: Vec<f64>,
    /// Per-group rate lower bounds, bits/s/Hz.
    pub theta: Vec<f64>,
    /// MEE rate slack coupling rates into the power model, bits/s.
    pub zeta: Vec<f64>,
    /// SINR-plus-one slacks.
    pub alpha: DMatrix<f64>,
    /// Consumed-power slack, Watts.
    pub t: f64,
    /// EE throughput slack, `Γ² ≤ Σ BΨΘ`.
    pub gamma: f64,
}

/// A scalar coordinate of the real embedding of [`IterateState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sym {
    /// Real part of `W[antenna, group]`.
    WRe(usize, usize),
    WIm(usize, usize),
    Eta(usize, usize),
    Delta(usize),
    Theta(usize),
    Zeta(usize),
    Alpha(usize, usize),
    T,
    Gamma,
}

impl IterateState {
    pub fn zeros(m: usize, n: usize, g: usize) -> Self {
        IterateState {
            w: PrecoderMatrix::zeros(m, g),
            eta: DMatrix::zeros(n, g),
            delta: vec![0.0; g],
            theta: vec![0.0; g],
            zeta: vec![0.0; g],
            alpha: DMatrix::from_element(n, g, 1.0),
            t: 1.0,
            gamma: 0.0,
        }
    }

    pub fn value(&self, s: Sym) -> f64 {
        match s {
            Sym::WRe(k, l) => self.w.w[(k, l)].re,
            Sym::WIm(k, l) => self.w.w[(k, l)].im,
            Sym::Eta(i, j) => self.eta[(i, j)],
            Sym::Delta(j) => self.delta[j],
            Sym::Theta(j) => self.theta[j],
            Sym::Zeta(j) => self.zeta[j],
            Sym::Alpha(i, j) => self.alpha[(i, j)],
            Sym::T => self.t,
            Sym::Gamma => self.gamma,
        }
    }

    pub fn set(&mut self, s: Sym, v: f64) {
        match s {
            Sym::WRe(k, l) => self.w.w[(k, l)].re = v,
            Sym::WIm(k, l) => self.w.w[(k, l)].im = v,
            Sym::Eta(i, j) => self.eta[(i, j)] = v,
            Sym::Delta(j) => self.delta[j] = v,
            Sym::Theta(j) => self.theta[j] = v,
            Sym::Zeta(j) => self.zeta[j] = v,
            Sym::Alpha(i, j) => self.alpha[(i, j)] = v,
            Sym::T => self.t = v,
            Sym::Gamma => self.gamma = v,
        }
    }

    pub fn assignment(&self) -> AssignmentState {
        AssignmentState {
            eta: self.eta.clone(),
            delta: self.delta.clone(),
        }
    }

    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        let ok = self.w.w.shape() == (cfg.m, cfg.g)
            && self.eta.shape() == (cfg.n, cfg.g)
            && self.alpha.shape() == (cfg.n, cfg.g)
            && self.delta.len() == cfg.g
            && self.theta.len() == cfg.g
            && self.zeta.len() == cfg.g;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("iterate does not match configuration".into()))
        }
    }
}

/// Tolerance within which an iterate may leave its box before being rejected
/// as an expansion point; smaller excursions (solver noise) are clamped.
pub const EXPANSION_TOL: f64 = 1e-5;

/// A validated snapshot of the previous iterate around which every surrogate
/// is expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionPoint(IterateState);

impl ExpansionPoint {
    /// Validates the invariants (`t > 0`, `α ≥ 1`, `η, δ ∈ [0, 1]`, `Θ, ζ, Γ ≥ 0`)
    /// and clamps excursions smaller than [`EXPANSION_TOL`].
    pub fn new(mut s: IterateState) -> Result<Self> {
        if !(s.t > 0.0 && s.t.is_finite()) {
            return Err(Error::MalformedState(format!("t = {} must be positive", s.t)));
        }
        let clamp = |v: &mut f64, lo: f64, hi: f64, name: &str| -> Result<()> {
            if !v.is_finite() || *v < lo - EXPANSION_TOL || *v > hi + EXPANSION_TOL {
                return Err(Error::MalformedState(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
            *v = v.clamp(lo, hi);
            Ok(())
        };
        for v in s.eta.iter_mut() {
            clamp(v, 0.0, 1.0, "eta")?;
        }
        for v in s.delta.iter_mut() {
            clamp(v, 0.0, 1.0, "delta")?;
        }
        for v in s.theta.iter_mut() {
            clamp(v, 0.0, f64::INFINITY, "theta")?;
        }
        for v in s.zeta.iter_mut() {
            clamp(v, 0.0, f64::INFINITY, "zeta")?;
        }
        for v in s.alpha.iter_mut() {
            clamp(v, 1.0, f64::INFINITY, "alpha")?;
        }
        clamp(&mut s.gamma, 0.0, f64::INFINITY, "gamma")?;
        if s.w.w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::MalformedState("non-finite precoder".into()));
        }
        Ok(ExpansionPoint(s))
    }

    pub fn state(&self) -> &IterateState {
        &self.0
    }

    pub fn into_state(self) -> IterateState {
        self.0
    }
}

impl std::ops::Deref for ExpansionPoint {
    type Target = IterateState;
    fn deref(&self) -> &IterateState {
        &self.0
    }
}

/// `constant + Σ coeff·sym`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymAffine {
    pub constant: f64,
    pub terms: Vec<(Sym, f64)>,
}

impl SymAffine {
    pub fn constant(c: f64) -> Self {
        SymAffine {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn sym(s: Sym) -> Self {
        SymAffine {
            constant: 0.0,
            terms: vec![(s, 1.0)],
        }
    }

    pub fn push(&mut self, s: Sym, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((s, c));
        }
        self
    }

    pub fn eval(&self, st: &IterateState) -> f64 {
        self.constant + self.terms.iter().map(|&(s, c)| c * st.value(s)).sum::<f64>()
    }

    /// Coefficient of `s` (summing repeats).
    pub fn coeff(&self, s: Sym) -> f64 {
        self.terms.iter().filter(|t| t.0 == s).map(|t| t.1).sum()
    }

    pub fn add_scaled(&mut self, other: &SymAffine, k: f64) -> &mut Self {
        for &(s, c) in &other.terms {
            self.push(s, c * k);
        }
        self.constant += other.constant * k;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

/// Real and imaginary parts of `h_iᴴ w_l` as affine forms in the precoder.
pub fn response_forms(h: &ChannelSet, i: usize, l: usize) -> (SymAffine, SymAffine) {
    let mut re = SymAffine::default();
    let mut im = SymAffine::default();
    for k in 0..h.n_antennas() {
        let a = h.h[(i, k)];
        re.push(Sym::WRe(k, l), a.re).push(Sym::WIm(k, l), -a.im);
        im.push(Sym::WRe(k, l), a.im).push(Sym::WIm(k, l), a.re);
    }
    (re, im)
}
