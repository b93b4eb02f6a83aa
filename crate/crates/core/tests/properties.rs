use proptest::prelude::*;

use bridgecert::couplingsim::reflect;
use bridgecert::fixedpoint::{
    alpha_bracket, alpha_psi_gaussian_closed_form, eval_f, eval_g, solve_alpha_psi, ProblemParams,
};
use bridgecert::heatflow::{backward_semigroup_apply, log_heat_apply, DriftFamily};
use bridgecert::lsi::{entropy_and_dirichlet, lsi_constant, LsiParams};
use bridgecert::potentials::Potential;
use bridgecert::schrodinger::{bridge_density, sinkhorn_solve, MarginalSpec};
use bridgecert::weakconvex::{fl, fl_prime};
use bridgecert::{Grid1D, GridFunction};

fn grid() -> Grid1D {
    Grid1D::new(-6.0, 6.0, 97).unwrap()
}

fn wiggly(amp: f64, freq: f64, phase: f64) -> GridFunction {
    GridFunction::from_fn(grid(), |x| 0.3 * x * x + amp * (freq * x + phase).sin()).unwrap()
}

proptest! {
    #[test]
    fn fl_solves_its_ode(l in 0.01f64..20.0, r in 0.0f64..10.0) {
        let h = 1e-4;
        let f = fl(l, r);
        let second = (fl_prime(l, r + h) - fl_prime(l, (r - h).max(0.0))) / (r + h - (r - h).max(0.0));
        prop_assert!((f * fl_prime(l, r) + 2.0 * second).abs() < 1e-5 * (1.0 + l * l));
        prop_assert!(f <= l * r * (1.0 + 1e-12) && f <= 2.0 * l.sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn g_inverts_f(t in 0.2f64..3.0, beta in 0.1f64..4.0, l in 0.0f64..10.0, alpha in -0.9f64..4.0, u in 0.01f64..20.0) {
        let p = ProblemParams::new(t, beta, 1.0, l, None).unwrap();
        let alpha = alpha / t;
        let s = eval_g(&p, alpha, u).unwrap();
        prop_assert!((eval_f(&p, alpha, s).unwrap() - u).abs() < 1e-10 * u.max(1.0));
        prop_assert!(s <= u / beta * (1.0 + 1e-11));
    }

    #[test]
    fn fixed_point_is_monotone_and_bracketed(t in 0.2f64..3.0, beta in 0.1f64..4.0, alpha_nu in 0.05f64..4.0, l in 0.0f64..4.0) {
        let p = ProblemParams::new(t, beta, alpha_nu, l, None).unwrap();
        let sol = solve_alpha_psi(&p).unwrap();
        prop_assert!(sol.residual < 1e-10);
        prop_assert!(sol.iterates.windows(2).all(|w| w[1] >= w[0]));
        let (lo, hi) = alpha_bracket(&p).unwrap();
        prop_assert!(sol.alpha_psi >= lo - 1e-10 && sol.alpha_psi <= hi + 1e-10);
        let flat = ProblemParams::new(t, beta, alpha_nu, 0.0, None).unwrap();
        let exact = alpha_psi_gaussian_closed_form(t, beta, alpha_nu);
        prop_assert!((solve_alpha_psi(&flat).unwrap().alpha_psi - exact).abs() < 1e-10);
        prop_assert!(sol.alpha_psi <= exact + 1e-10);
    }

    #[test]
    fn log_heat_is_monotone_and_shift_equivariant(
        amp in 0.0f64..2.0, freq in 0.2f64..3.0, phase in 0.0f64..6.3, bump in 0.0f64..1.0, c in -5.0f64..5.0, tau in 0.05f64..2.0,
    ) {
        let g = wiggly(amp, freq, phase);
        let h = log_heat_apply(&g, tau).unwrap();
        let shifted = log_heat_apply(&g.shifted(c), tau).unwrap();
        for (a, b) in h.values().iter().zip(shifted.values()) {
            prop_assert!((b - a - c).abs() < 1e-9 * (1.0 + a.abs()));
        }
        let upper = g.map(|x, v| v + bump * (-x * x).exp()).unwrap();
        let hu = log_heat_apply(&upper, tau).unwrap();
        for (a, b) in h.values().iter().zip(hu.values()) {
            prop_assert!(*b >= a - 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn backward_semigroup_preserves_order_and_constants(
        amp in 0.0f64..1.0, freq in 0.2f64..2.0, phase in 0.0f64..6.3, bump in 0.0f64..1.0, span in 0.05f64..0.5,
    ) {
        let drift = DriftFamily::stationary(&GridFunction::from_fn(grid(), |x| 0.5 * x).unwrap());
        let f = GridFunction::from_fn(grid(), |x| 1.5 + amp * (freq * x + phase).sin()).unwrap();
        let g = f.map(|x, v| v + bump * (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
        let pf = backward_semigroup_apply(&f, &drift, 0.0, span, 1).unwrap();
        let pg = backward_semigroup_apply(&g, &drift, 0.0, span, 1).unwrap();
        for (a, b) in pf.values().iter().zip(pg.values()) {
            prop_assert!(*b >= a - 1e-12);
        }
        let one = backward_semigroup_apply(&GridFunction::constant(grid(), 1.0).unwrap(), &drift, 0.0, span, 1).unwrap();
        prop_assert!(one.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reflection_is_an_isometric_involution(b in prop::array::uniform3(-3.0f64..3.0), e in prop::array::uniform3(-1.0f64..1.0), dim in 1usize..=3) {
        let norm = e[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let mut unit = [0.0; 3];
        for k in 0..dim {
            unit[k] = e[k] / norm;
        }
        let once = reflect(&b, &unit, dim);
        let twice = reflect(&once, &unit, dim);
        let n0: f64 = b[..dim].iter().map(|v| v * v).sum();
        let n1: f64 = once[..dim].iter().map(|v| v * v).sum();
        prop_assert!((n0 - n1).abs() < 1e-12 * (1.0 + n0));
        for k in 0..dim {
            prop_assert!((twice[k] - b[k]).abs() < 1e-12);
        }
        if dim == 1 {
            prop_assert!((once[0] + b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn lsi_constant_is_the_larger_mixing_form(alpha in 0.0f64..3.0, l in 0.0f64..3.0, t in 0.1f64..3.0, c_mu in 0.1f64..3.0) {
        let r = lsi_constant(&LsiParams::new(alpha, l, t, c_mu).unwrap());
        prop_assert_eq!(r.constant, r.mixing_constant.max(r.squared_constant));
        prop_assert!(r.squared_constant >= c_mu * r.c0t * r.c0t * (1.0 - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sinkhorn_matches_both_marginals(var_mu in 0.4f64..2.0, var_nu in 0.4f64..2.0, mean in -1.0f64..1.0, t in 0.3f64..2.0) {
        let g = Grid1D::new(-10.0, 10.0, 161).unwrap();
        let mu = MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var: var_mu }, g).unwrap();
        let nu = MarginalSpec::from_potential(&Potential::Gaussian { mean, var: var_nu }, g).unwrap();
        let state = sinkhorn_solve(&mu, &nu, t, 1e-10, 5000).unwrap();
        prop_assert!(state.history.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-6) + 1e-15));
        let bridge = bridge_density(&state, &mu, &nu).unwrap();
        let w = g.trapezoid_weights();
        let tv = |m: Vec<f64>, target: &MarginalSpec| {
            0.5 * m.iter().zip(target.density.values()).zip(&w).map(|((a, p), w)| (a - w * p).abs()).sum::<f64>()
        };
        prop_assert!(tv(bridge.x_marginal(), &mu) < 1e-9);
        prop_assert!(tv(bridge.y_marginal(), &nu) < 1e-9);
        prop_assert!(bridge.masses().iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn entropy_is_nonnegative_and_homogeneous(amp in 0.0f64..1.0, freq in 0.2f64..2.0, scale in 0.1f64..10.0) {
        let g = Grid1D::new(-6.0, 6.0, 65).unwrap();
        let mu = MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var: 1.0 }, g).unwrap();
        let state = sinkhorn_solve(&mu, &mu, 1.0, 1e-10, 1000).unwrap();
        let bridge = bridge_density(&state, &mu, &mu).unwrap();
        let n = g.len();
        let xs = g.points();
        let f: Vec<f64> = (0..n * n).map(|k| 1.0 + amp * (freq * (xs[k / n] - xs[k % n])).cos().abs()).collect();
        let (ent, dir) = entropy_and_dirichlet(&bridge, &f);
        prop_assert!(ent >= -1e-12 && dir >= 0.0);
        let scaled: Vec<f64> = f.iter().map(|v| scale * v).collect();
        let (ent_s, dir_s) = entropy_and_dirichlet(&bridge, &scaled);
        prop_assert!((ent_s - scale * ent).abs() < 1e-9 * (1.0 + scale * ent.abs()));
        prop_assert!((dir_s - scale * dir).abs() < 1e-9 * (1.0 + scale * dir));
        let (ent_c, dir_c) = entropy_and_dirichlet(&bridge, &vec![2.0; n * n]);
        prop_assert!(ent_c.abs() < 1e-12 && dir_c.abs() < 1e-12);
    }
}
