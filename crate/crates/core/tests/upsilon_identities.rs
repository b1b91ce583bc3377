//! Exact identities of the calculus, checked on random chains and fields.

mod common;

use markov_curv::builders;
use markov_curv::flow::{em_identity_residuals, fisher, fisher_dirichlet};
use markov_curv::scalar::{bregman_upsilon, ScalarKernel};
use markov_curv::upsilon::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 1000;
const REL_TOL: f64 = 1e-11;

/// Runs `draw` DRAWS times and returns the largest relative residual.
fn worst(seed: u64, mut draw: impl FnMut(&mut ChaCha8Rng) -> Residual) -> f64 {
    let mut rng = common::rng(seed);
    (0..DRAWS).map(|_| draw(&mut rng).relative()).fold(0.0, f64::max)
}

#[test]
fn first_identity_log() {
    let w = worst(1, |rng| {
        let c = common::draw_chain(rng);
        let f = common::random_positive(rng, c.n(), 3.0);
        first_fundamental_identity_residual(&c, ScalarKernel::LogBregman, &f).unwrap()
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn first_identity_half_square() {
    let w = worst(2, |rng| {
        let c = common::draw_chain(rng);
        let f = common::random_field(rng, c.n(), 5.0);
        first_fundamental_identity_residual(&c, ScalarKernel::HalfSquare, &f).unwrap()
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn first_identity_power() {
    let w = worst(3, |rng| {
        let c = common::draw_chain(rng);
        let p = rng.random_range(1.05..1.95);
        let f = common::random_positive(rng, c.n(), 3.0);
        first_fundamental_identity_residual(&c, ScalarKernel::PhiPPrime(p), &f).unwrap()
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn log_chain_rule() {
    let w = worst(4, |rng| {
        let c = common::draw_chain(rng);
        let f = common::random_positive(rng, c.n(), 4.0);
        log_chain_residual(&c, &f).unwrap()
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn exponential_integral_identity() {
    let w = worst(5, |rng| {
        let c = common::draw_chain(rng);
        let g = common::random_field(rng, c.n(), 3.0);
        let h = common::random_field(rng, c.n(), 3.0);
        exp_integral_identity_residual(&c, &g, &h).unwrap()
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn psi2_definition_matches_expansion() {
    let w = worst(6, |rng| {
        let c = common::draw_chain(rng);
        let f = common::random_field(rng, c.n(), 3.0);
        let a = psi2_upsilon(&c, &f).unwrap();
        let b = psi2_upsilon_expanded(&c, &f).unwrap();
        // Scale by the sizes of the summed terms, which may cancel.
        let psi = psi_upsilon(&c, &f).unwrap();
        let scale = c.max_m1() * psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = field_residual(&a, &b);
        Residual { abs: r.abs, scale: r.scale.max(scale) }
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn gamma2_definition_matches_expansion() {
    let w = worst(7, |rng| {
        let c = common::draw_chain(rng);
        let f = common::random_field(rng, c.n(), 3.0);
        let a = gamma2(&c, &f).unwrap();
        let b: Vec<f64> = (0..c.n()).map(|x| gamma2_expanded_at(&c, &f, x)).collect();
        let g = gamma(&c, &f, &f).unwrap();
        let scale = c.max_m1() * g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = field_residual(&a, &b);
        Residual { abs: r.abs, scale: r.scale.max(scale) }
    });
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn lattice_closed_forms() {
    let mut rng = common::rng(8);
    let mut worst_g2 = 0.0f64;
    let mut worst_p2 = 0.0f64;
    let mut worst_second = 0.0f64;
    for _ in 0..DRAWS {
        let w = common::random_window(&mut rng);
        let f = common::random_field(&mut rng, w.chain.n(), 2.0);
        let g2 = gamma2(&w.chain, &f).unwrap();
        let p2 = psi2_upsilon(&w.chain, &f).unwrap();
        let sec = second_identity_lhs(&w.chain, ScalarKernel::Upsilon, ScalarKernel::UpsilonPrime, &f).unwrap();
        let interior = w.interior();
        assert!(!interior.is_empty());
        for &x in &interior {
            let cg = w.gamma2_closed(&f, x).unwrap();
            let cp = w.psi2_closed(&f, x).unwrap();
            let cs = w.second_identity_closed(ScalarKernel::Upsilon, &f, x).unwrap().unwrap();
            worst_g2 = worst_g2.max((cg - g2[x]).abs() / cg.abs().max(1e-300));
            worst_p2 = worst_p2.max((cp - p2[x]).abs() / cp.abs().max(1e-300));
            worst_second = worst_second.max((cs - sec[x]).abs() / cs.abs().max(1e-300));
        }
    }
    assert!(worst_g2 <= REL_TOL, "{worst_g2}");
    assert!(worst_p2 <= REL_TOL, "{worst_p2}");
    assert!(worst_second <= REL_TOL, "{worst_second}");
}

#[test]
fn munch_gamma2_log_matches_psi2_of_log() {
    let mut rng = common::rng(9);
    let mut w = 0.0f64;
    for _ in 0..DRAWS {
        let n = rng.random_range(2..9);
        let mut edges = Vec::new();
        for v in 1..n {
            edges.push((rng.random_range(0..v), v));
        }
        for _ in 0..rng.random_range(0..6) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let c = builders::unweighted_graph(n, &edges).unwrap();
        let f = common::random_positive(&mut rng, n, 3.0);
        let lg: Vec<f64> = f.iter().map(|v| v.ln()).collect();
        let a = munch_gamma2_log(&c, &f).unwrap();
        let b = psi2_upsilon(&c, &lg).unwrap();
        // The construction divides Laplacians by f, so its intermediate terms
        // are of size M1 max |Delta f / f|; round-off is measured against that.
        let lap = c.generator_apply(&f).unwrap();
        let term = lap.iter().zip(&f).fold(0.0f64, |m, (l, v)| m.max((l / v).abs()));
        let r = field_residual(&a, &b);
        w = w.max(r.abs / r.scale.max(c.max_m1() * term));
    }
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn munch_requires_unit_rates() {
    let c = builders::two_point(1.0, 2.0).unwrap();
    assert!(munch_gamma2_log(&c, &[1.0, 2.0]).is_err());
}

#[test]
fn erbar_maas_identities() {
    let mut rng = common::rng(10);
    let mut w = 0.0f64;
    for _ in 0..DRAWS {
        let c = common::draw_chain(&mut rng);
        let rho = common::random_positive(&mut rng, c.n(), 2.0);
        let (ra, rb) = em_identity_residuals(&c, &rho).unwrap();
        w = w.max(ra.relative()).max(rb.relative());
    }
    assert!(w <= 1e-10, "{w}");
}

#[test]
fn erbar_maas_vanish_at_constant() {
    let c = builders::complete(3).unwrap();
    let (ra, rb) = em_identity_residuals(&c, &[1.0; 3]).unwrap();
    assert_eq!(ra.abs, 0.0);
    assert_eq!(rb.abs, 0.0);
}

#[test]
fn fisher_two_formulas_agree() {
    let mut rng = common::rng(11);
    let mut w = 0.0f64;
    for _ in 0..DRAWS {
        let c = common::draw_chain(&mut rng);
        let rho = common::random_positive(&mut rng, c.n(), 3.0);
        let a = fisher(&c, &rho).unwrap();
        let b = fisher_dirichlet(&c, &rho).unwrap();
        w = w.max((a - b).abs() / a.abs().max(b.abs()));
    }
    assert!(w <= REL_TOL, "{w}");
}

#[test]
fn bregman_examples() {
    assert_eq!(ScalarKernel::HalfSquare.bregman(3.0, 1.0).unwrap(), 2.0);
    let e = std::f64::consts::E;
    assert!((ScalarKernel::Upsilon.bregman(1.0, 0.0).unwrap() - (e - 2.0)).abs() < 1e-15);
    assert!((bregman_upsilon(1.0, 0.0) - (e - 2.0)).abs() < 1e-15);
    assert!(ScalarKernel::LogBregman.bregman(-1.0, 1.0).is_err());
    // The concave kernels have nonpositive Bregman distances.
    assert!(ScalarKernel::LogBregman.bregman(3.0, 1.0).unwrap() < 0.0);
    assert!(ScalarKernel::PhiPPrime(1.5).bregman(3.0, 1.0).unwrap() < 0.0);
}

#[test]
fn gamma_examples() {
    let c = builders::two_point(1.0, 1.0).unwrap();
    let g = gamma(&c, &[0.0, 2.0], &[0.0, 2.0]).unwrap();
    assert_eq!(g, vec![2.0, 2.0]);
    // Linear field on K_2 is an eigenfunction: Gamma_2 = 2 Gamma.
    let g2 = gamma2(&c, &[0.0, 2.0]).unwrap();
    assert!((g2[0] - 4.0).abs() < 1e-14);
}

#[test]
fn psi_is_nonnegative_and_vanishes_on_constants() {
    let mut rng = common::rng(12);
    for _ in 0..200 {
        let c = common::draw_chain(&mut rng);
        let f = common::random_field(&mut rng, c.n(), 4.0);
        assert!(psi_upsilon(&c, &f).unwrap().iter().all(|v| *v >= 0.0));
        let k = vec![rng.random_range(-5.0..5.0); c.n()];
        assert!(psi_upsilon(&c, &k).unwrap().iter().all(|v| *v == 0.0));
        assert!(psi2_upsilon(&c, &k).unwrap().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn power_operators_approach_log_operators() {
    let mut rng = common::rng(13);
    let p = 1.0 + 1e-6;
    for _ in 0..100 {
        let c = common::draw_chain(&mut rng);
        let f = common::random_positive(&mut rng, c.n(), 1.5);
        let lg: Vec<f64> = f.iter().map(|v| v.ln()).collect();
        let a = psi_p(&c, p, &f).unwrap();
        let b = psi_upsilon(&c, &lg).unwrap();
        let a2 = psi2_p(&c, p, &f).unwrap();
        let b2 = psi2_upsilon(&c, &lg).unwrap();
        for x in 0..c.n() {
            assert!((a[x] - b[x]).abs() <= 1e-4 * (b[x].abs() + 1e-3));
            assert!((a2[x] - b2[x]).abs() <= 1e-4 * (b2[x].abs() + c.max_m1() * b[x].abs() + 1e-3));
        }
    }
}

#[test]
fn small_fields_compare_with_quadratic_calculus() {
    let mut rng = common::rng(14);
    for _ in 0..200 {
        let c = common::draw_chain(&mut rng);
        let eps = rng.random_range(0.01..0.2);
        let de = markov_curv::scalar::delta_eps(eps).unwrap();
        let f = common::random_field(&mut rng, c.n(), 0.49 * de);
        let rep = small_field_comparison(&c, &f, eps).unwrap();
        assert!(rep.holds(), "{rep:?}");
    }
    let c = builders::complete(3).unwrap();
    assert!(small_field_comparison(&c, &[0.0, 0.0, 10.0], 0.1).is_err());
}
