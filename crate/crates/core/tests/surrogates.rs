mod common;

use mgmc_core::oracle::check_gradient;
use mgmc_core::state::{ExpansionPoint, IterateState, Sym, SymAffine};
use mgmc_core::surrogate::*;
use mgmc_core::system::{generate_channels, ConvexTerm, SystemConfig};
use proptest::prelude::*;

use common::{families, random_state, rng};

fn origin() -> ExpansionPoint {
    ExpansionPoint::new(IterateState::zeros(2, 3, 2)).unwrap()
}

fn vanishes(a: &SymAffine) -> bool {
    a.constant.abs() < 1e-15 && a.terms.iter().all(|t| t.1.abs() < 1e-15)
}

#[test]
fn entropy_examples() {
    assert!(vanishes(&taylor_entropy(Sym::Eta(0, 0), 0.5).expr));
    let t = taylor_entropy(Sym::Eta(0, 0), 0.9);
    assert!((t.expr.coeff(Sym::Eta(0, 0)) - 2.1972245773).abs() < 1e-9);
    // Endpoints are clamped, never infinite.
    assert!(taylor_entropy(Sym::Delta(0), 0.0).expr.coeff(Sym::Delta(0)).is_finite());
    assert!(taylor_entropy(Sym::Delta(0), 1.0).expr.coeff(Sym::Delta(0)).is_finite());
}

#[test]
fn entropy_gradient_vanishes_at_the_symmetric_point() {
    let mut st = IterateState::zeros(1, 1, 1);
    st.delta[0] = 0.5;
    let g = taylor_entropy(Sym::Delta(0), 0.5).expr;
    assert!(check_gradient(|s| entropy(s.delta[0]), &g, &st, &[Sym::Delta(0)], 1e-5) <= 1e-8);
}

#[test]
fn quadratic_tangents_vanish_at_the_origin() {
    let ep = origin();
    assert!(vanishes(&taylor_g(&ep, 1, 0)));
    assert!(vanishes(&taylor_k(&ep, 1)));
    assert!(vanishes(&taylor_gamma_sq(&ep)));
}

#[test]
fn p2_tangent_examples() {
    let arg = SymAffine::sym(Sym::Zeta(0));
    assert!(vanishes(&taylor_p2(&ConvexTerm::Zero, 1.3, &arg)));
    let t = taylor_p2(&ConvexTerm::Quadratic { a: 1.0, b: 0.0 }, 1.0, &arg);
    assert_eq!((t.constant, t.coeff(Sym::Zeta(0))), (-1.0, 2.0));
}

#[test]
fn j_at_zero_precoder() {
    let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.0);
    let h = generate_channels(&cfg, 1).unwrap();
    let jt = taylor_j(&origin(), &cfg, &h, 0, 1);
    // Constant σ² + σ²·α⁰, α-coefficient −σ², no precoder terms.
    assert!((jt.constant - 2.0).abs() < 1e-15);
    assert_eq!(jt.coeff(Sym::Alpha(0, 1)), -1.0);
    for k in 0..2 {
        for l in 0..2 {
            assert_eq!(jt.coeff(Sym::WRe(k, l)), 0.0);
            assert_eq!(jt.coeff(Sym::WIm(k, l)), 0.0);
        }
    }
}

#[test]
fn i_without_threshold_ignores_membership() {
    let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.0);
    let h = generate_channels(&cfg, 2).unwrap();
    let mut r = rng(3);
    let s0 = random_state(&mut r, 2, 3, 2);
    let ep = ExpansionPoint::new(s0.clone()).unwrap();
    let it = taylor_i(&ep, &cfg, &h, 2, 0, 0.0);
    assert_eq!(it.coeff(Sym::Eta(2, 0)), 0.0);
    // Same as linearizing Σ|h w|² + σ², i.e. J with α fixed at 1.
    let mut s1 = s0.clone();
    s1.alpha[(2, 0)] = 1.0;
    let j1 = taylor_j(&ExpansionPoint::new(s1.clone()).unwrap(), &cfg, &h, 2, 0);
    let probe = random_state(&mut r, 2, 3, 2);
    let mut probe1 = probe.clone();
    probe1.alpha[(2, 0)] = 1.0;
    assert!((it.eval(&probe) - j1.eval(&probe1)).abs() < 1e-9 * (1.0 + it.eval(&probe).abs()));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_surrogate_is_tangent(seed in any::<u64>()) {
        let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.5);
        let h = generate_channels(&cfg, seed % 97).unwrap();
        let s0 = random_state(&mut rng(seed), 2, 3, 2);
        let ep = ExpansionPoint::new(s0.clone()).unwrap();
        for (name, exact, sur) in families(&s0, &ep, &cfg, &h) {
            prop_assert!((exact - sur).abs() <= 1e-9 * exact.abs().max(1.0), "{}: {} vs {}", name, exact, sur);
        }
    }

    #[test]
    fn every_surrogate_is_a_minorant(seed in any::<u64>()) {
        let cfg = SystemConfig::standard(2, 3, 2, 20.0, 1.5);
        let h = generate_channels(&cfg, seed % 89).unwrap();
        let mut r = rng(seed);
        let s0 = random_state(&mut r, 2, 3, 2);
        let ep = ExpansionPoint::new(s0).unwrap();
        let s = random_state(&mut r, 2, 3, 2);
        for (name, exact, sur) in families(&s, &ep, &cfg, &h) {
            prop_assert!(sur <= exact + 1e-9 * exact.abs().max(1.0), "{}: {} > {}", name, sur, exact);
        }
    }
}
