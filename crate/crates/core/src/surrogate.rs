//! First-order Taylor surrogates used by the convexification step.
//!
//! Every function here is pure: it reads an [`ExpansionPoint`] and returns an
//! affine form (plus, for the fractional objective term, a concave remainder
//! that the criteria builders lower as a quadratic-over-linear cone).

use crate::state::{response_forms, ExpansionPoint, IterateState, Sym, SymAffine};
use crate::system::{ChannelSet, ConvexTerm, PrecoderMatrix, SystemConfig};

/// Distance from {0, 1} at which the entropy slope is evaluated.
pub const ENTROPY_CLAMP: f64 = 1e-6;

/// `x log x + (1 − x) log(1 − x)`, with `0 log 0 = 0`.
pub fn entropy(x: f64) -> f64 {
    let xlx = |v: f64| if v <= 0.0 { 0.0 } else { v * v.ln() };
    xlx(x) + xlx(1.0 - x)
}

pub fn entropy_slope(x0: f64) -> f64 {
    let x = x0.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    x.ln() - (1.0 - x).ln()
}

/// Linearized entropy penalty: `expr = slope·x`, and `expr + dropped` is the
/// line through `(x0, P(x0))` with the clamped slope. For `x0` at least
/// [`ENTROPY_CLAMP`] away from {0, 1} this is the exact tangent.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyTangent {
    pub expr: SymAffine,
    pub dropped: f64,
}

pub fn taylor_entropy(x: Sym, x0: f64) -> EntropyTangent {
    let slope = entropy_slope(x0);
    let mut expr = SymAffine::default();
    expr.push(x, slope);
    EntropyTangent {
        expr,
        dropped: entropy(x0) - slope * x0,
    }
}

/// `BΨ((η+Θ)² − η² − Θ²)/(2t)`, i.e. `BΨ·ηΘ/t`.
pub fn f_exact(b: f64, psi: f64, eta: f64, theta: f64, t: f64) -> f64 {
    b * psi * ((eta + theta).powi(2) - eta * eta - theta * theta) / (2.0 * t)
}

/// Surrogate of `f`: `linear − weight·(η² + Θ²)/t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FSurrogate {
    pub linear: SymAffine,
    pub weight: f64,
    pub eta: Sym,
    pub theta: Sym,
}

impl FSurrogate {
    pub fn eval(&self, st: &IterateState) -> f64 {
        let e = st.value(self.eta);
        let th = st.value(self.theta);
        self.linear.eval(st) - self.weight * (e * e + th * th) / st.t
    }
}

pub fn taylor_f(ep: &ExpansionPoint, cfg: &SystemConfig, i: usize, j: usize) -> FSurrogate {
    let k = cfg.bandwidth * cfg.psi[j];
    let r = (ep.eta[(i, j)] + ep.theta[j]) / ep.t;
    let mut linear = SymAffine::default();
    linear
        .push(Sym::Eta(i, j), k * r)
        .push(Sym::Theta(j), k * r)
        .push(Sym::T, -k * r * r / 2.0);
    FSurrogate {
        linear,
        weight: k / 2.0,
        eta: Sym::Eta(i, j),
        theta: Sym::Theta(j),
    }
}

/// `Σ_l |h_iᴴ w_l|² + σ²`.
pub fn total_received(h: &ChannelSet, w: &PrecoderMatrix, i: usize, sigma2: f64) -> f64 {
    h.gains(w, i).iter().sum::<f64>() + sigma2
}

/// `Σ_{l≠j} |h_iᴴ w_l|² + σ²`.
pub fn interference_plus_noise(h: &ChannelSet, w: &PrecoderMatrix, i: usize, j: usize, sigma2: f64) -> f64 {
    let g = h.gains(w, i);
    g.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, v)| v).sum::<f64>() + sigma2
}

pub fn j_exact(h: &ChannelSet, w: &PrecoderMatrix, alpha: f64, i: usize, sigma2: f64) -> f64 {
    total_received(h, w, i, sigma2) / alpha
}

/// Adds `scale·∇_W (Σ_l |h_iᴴ w_l|²)·(W − W⁰)` to `out` and returns the
/// constant contributed by `−∇·W⁰`.
fn push_power_gradient(out: &mut SymAffine, ep: &IterateState, h: &ChannelSet, i: usize, scale: f64) -> f64 {
    let mut shift = 0.0;
    for l in 0..ep.w.n_groups() {
        let (re, im) = response_forms(h, i, l);
        let zr = re.eval(ep);
        let zi = im.eval(ep);
        // d|z|²/dx = 2(zr·dRe/dx + zi·dIm/dx)
        for (form, z) in [(&re, zr), (&im, zi)] {
            for &(s, c) in &form.terms {
                let g = scale * 2.0 * z * c;
                out.push(s, g);
                shift -= g * ep.value(s);
            }
        }
    }
    shift
}

/// Linearization of `J_ij(W, α) = (Σ_l |h_iᴴ w_l|² + σ²)/α`.
pub fn taylor_j(ep: &ExpansionPoint, cfg: &SystemConfig, h: &ChannelSet, i: usize, j: usize) -> SymAffine {
    let a0 = ep.alpha[(i, j)];
    let s0 = total_received(h, &ep.w, i, cfg.sigma2);
    let mut out = SymAffine::constant(s0 / a0);
    let shift = push_power_gradient(&mut out, ep, h, i, 1.0 / a0);
    let ga = -s0 / (a0 * a0);
    out.push(Sym::Alpha(i, j), ga);
    out.constant += shift - ga * a0;
    out
}

/// Tangent of `a² + b²` at `(a0, b0)`.
pub fn taylor_sum_sq(a: Sym, a0: f64, b: Sym, b0: f64) -> SymAffine {
    let mut out = SymAffine::constant(-a0 * a0 - b0 * b0);
    out.push(a, 2.0 * a0).push(b, 2.0 * b0);
    out
}

/// Tangent of `η_ij² + Θ_j²`.
pub fn taylor_g(ep: &ExpansionPoint, i: usize, j: usize) -> SymAffine {
    taylor_sum_sq(Sym::Eta(i, j), ep.eta[(i, j)], Sym::Theta(j), ep.theta[j])
}

/// Tangent of `(δ_j + Θ_j)²`.
pub fn taylor_k(ep: &ExpansionPoint, j: usize) -> SymAffine {
    let u0 = ep.delta[j] + ep.theta[j];
    let mut out = SymAffine::constant(u0 * u0 - 2.0 * u0 * u0);
    out.push(Sym::Delta(j), 2.0 * u0).push(Sym::Theta(j), 2.0 * u0);
    out
}

/// Tangent of `p2` at `x0`, composed with the affine argument `arg`.
pub fn taylor_p2(p2: &ConvexTerm, x0: f64, arg: &SymAffine) -> SymAffine {
    let d = p2.derivative(x0);
    let mut out = SymAffine::constant(p2.value(x0) - d * x0);
    out.add_scaled(arg, d);
    out
}

/// Linearization of `(Σ_l |h_iᴴ w_l|² + σ²)/(1 + η_ij·τ)`.
pub fn taylor_i(ep: &ExpansionPoint, cfg: &SystemConfig, h: &ChannelSet, i: usize, j: usize, tau: f64) -> SymAffine {
    let d0 = 1.0 + ep.eta[(i, j)] * tau;
    let s0 = total_received(h, &ep.w, i, cfg.sigma2);
    let mut out = SymAffine::constant(s0 / d0);
    let shift = push_power_gradient(&mut out, ep, h, i, 1.0 / d0);
    let ge = -tau * s0 / (d0 * d0);
    out.push(Sym::Eta(i, j), ge);
    out.constant += shift - ge * ep.eta[(i, j)];
    out
}

pub fn i_exact(h: &ChannelSet, w: &PrecoderMatrix, eta: f64, tau: f64, i: usize, sigma2: f64) -> f64 {
    total_received(h, w, i, sigma2) / (1.0 + eta * tau)
}

/// Tangent of `Γ²/t`: `2Γ⁰Γ/t⁰ − (Γ⁰/t⁰)²·t`.
pub fn taylor_gamma_sq(ep: &ExpansionPoint) -> SymAffine {
    let r = ep.gamma / ep.t;
    let mut out = SymAffine::default();
    out.push(Sym::Gamma, 2.0 * r).push(Sym::T, -r * r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::check_gradient;
    use crate::system::generate_channels;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, m: usize, n: usize, g: usize) -> IterateState {
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

    #[test]
    fn entropy_slope_examples() {
        assert!(entropy_slope(0.5).abs() < 1e-15);
        assert!((entropy_slope(0.9) - 9f64.ln()).abs() < 1e-12);
        let t = taylor_entropy(Sym::Eta(0, 0), 0.5);
        assert!(t.expr.terms.iter().all(|&(_, c)| c.abs() < 1e-15));
        assert!((t.dropped - entropy(0.5)).abs() < 1e-15);
    }

    #[test]
    fn entropy_tangent_is_a_minorant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x0: f64 = rng.random_range(0.0..1.0);
            let x: f64 = rng.random_range(0.0..1.0);
            let t = taylor_entropy(Sym::Delta(0), x0);
            let mut st = IterateState::zeros(1, 1, 1);
            st.delta[0] = x;
            assert!(t.expr.eval(&st) + t.dropped <= entropy(x) + 1e-12);
        }
    }

    #[test]
    fn f_surrogate_tangent_and_minorant() {
        let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s0 = random_state(&mut rng, 2, 3, 2);
            let ep = ExpansionPoint::new(s0.clone()).unwrap();
            let fs = taylor_f(&ep, &cfg, 1, 0);
            let exact0 = f_exact(1.0, 1.0, s0.eta[(1, 0)], s0.theta[0], s0.t);
            assert!((fs.eval(&s0) - exact0).abs() <= 1e-12 * (1.0 + exact0.abs()));
            let s = random_state(&mut rng, 2, 3, 2);
            let exact = f_exact(1.0, 1.0, s.eta[(1, 0)], s.theta[0], s.t);
            assert!(fs.eval(&s) <= exact + 1e-10);
        }
    }

    #[test]
    fn f_surrogate_at_zero_u() {
        let cfg = SystemConfig::standard(1, 1, 1, 20.0, 1.0);
        let st = IterateState::zeros(1, 1, 1);
        let fs = taylor_f(&ExpansionPoint::new(st).unwrap(), &cfg, 0, 0);
        assert!(fs.linear.terms.iter().all(|&(_, c)| c == 0.0));
        assert_eq!(fs.weight, 0.5);
    }

    #[test]
    fn j_linearization_at_origin() {
        let cfg = SystemConfig::standard(2, 2, 2, 20.0, 1.0);
        let h = generate_channels(&cfg, 3).unwrap();
        let ep = ExpansionPoint::new(IterateState::zeros(2, 2, 2)).unwrap();
        let jt = taylor_j(&ep, &cfg, &h, 1, 0);
        assert!((jt.constant - 2.0).abs() < 1e-15);
        assert_eq!(jt.coeff(Sym::Alpha(1, 0)), -1.0);
        assert!(jt.terms.iter().filter(|t| t.0 != Sym::Alpha(1, 0)).all(|t| t.1 == 0.0));
    }

    #[test]
    fn j_and_i_gradients_match_finite_differences() {
        let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.0);
        let h = generate_channels(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s0 = random_state(&mut rng, 2, 3, 2);
            let ep = ExpansionPoint::new(s0.clone()).unwrap();
            let mut syms: Vec<Sym> = Vec::new();
            for k in 0..2 {
                for l in 0..2 {
                    syms.push(Sym::WRe(k, l));
                    syms.push(Sym::WIm(k, l));
                }
            }
            let jt = taylor_j(&ep, &cfg, &h, 2, 1);
            let mut js = syms.clone();
            js.push(Sym::Alpha(2, 1));
            let jf = |s: &IterateState| j_exact(&h, &s.w, s.alpha[(2, 1)], 2, 1.0);
            assert!(check_gradient(jf, &jt, &s0, &js, 1e-5) < 1e-5);
            assert!((jt.eval(&s0) - jf(&s0)).abs() < 1e-12 * jf(&s0));

            let tau = 3.0;
            let it = taylor_i(&ep, &cfg, &h, 0, 1, tau);
            let mut is = syms.clone();
            is.push(Sym::Eta(0, 1));
            let ifn = |s: &IterateState| i_exact(&h, &s.w, s.eta[(0, 1)], tau, 0, 1.0);
            assert!(check_gradient(ifn, &it, &s0, &is, 1e-5) < 1e-5);
            assert!((it.eval(&s0) - ifn(&s0)).abs() < 1e-12 * ifn(&s0));
        }
    }

    #[test]
    fn quadratic_tangents() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let s0 = random_state(&mut rng, 1, 2, 2);
            let ep = ExpansionPoint::new(s0.clone()).unwrap();
            let g = taylor_g(&ep, 1, 1);
            let k = taylor_k(&ep, 1);
            let gex = |s: &IterateState| s.eta[(1, 1)].powi(2) + s.theta[1].powi(2);
            let kex = |s: &IterateState| (s.delta[1] + s.theta[1]).powi(2);
            assert!((g.eval(&s0) - gex(&s0)).abs() < 1e-12 * (1.0 + gex(&s0)));
            assert!((k.eval(&s0) - kex(&s0)).abs() < 1e-12 * (1.0 + kex(&s0)));
            let s = random_state(&mut rng, 1, 2, 2);
            assert!(g.eval(&s) <= gex(&s) + 1e-12);
            assert!(k.eval(&s) <= kex(&s) + 1e-12);

            let gt = taylor_gamma_sq(&ep);
            let gq = |s: &IterateState| s.gamma * s.gamma / s.t;
            assert!((gt.eval(&s0) - gq(&s0)).abs() < 1e-12 * (1.0 + gq(&s0)));
            assert!(gt.eval(&s) <= gq(&s) + 1e-12);
        }
        let zero = ExpansionPoint::new(IterateState::zeros(1, 1, 1)).unwrap();
        assert!(taylor_g(&zero, 0, 0).terms.iter().all(|t| t.1 == 0.0));
        assert!(taylor_k(&zero, 0).terms.iter().all(|t| t.1 == 0.0));
        assert!(taylor_gamma_sq(&zero).terms.iter().all(|t| t.1 == 0.0));
    }

    #[test]
    fn p2_tangent_examples() {
        let arg = SymAffine::sym(Sym::Zeta(0));
        let zero = taylor_p2(&ConvexTerm::Zero, 1.3, &arg);
        assert!(zero.terms.is_empty() && zero.constant == 0.0);
        let sq = ConvexTerm::Quadratic { a: 1.0, b: 0.0 };
        let t = taylor_p2(&sq, 1.0, &arg);
        assert_eq!(t.constant, -1.0);
        assert_eq!(t.coeff(Sym::Zeta(0)), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x0: f64 = rng.random_range(0.0..10.0);
            let x: f64 = rng.random_range(0.0..10.0);
            let mut st = IterateState::zeros(1, 1, 1);
            st.zeta[0] = x;
            assert!(taylor_p2(&sq, x0, &arg).eval(&st) <= x * x + 1e-12);
        }
    }
}
