use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::gatings::random_halfspace_family;
use crate::gp::{gp_kernel, input_kernel};
use crate::rng::rng_from_seed;

struct Fixture {
    x: DMatrix<f64>,
    gates: DMatrix<f64>,
    k0: SymMatrix,
    y: DVector<f64>,
    family: crate::gatings::GatingFamily,
}

fn fixture(n0: usize, m: usize, p: usize, sigma: f64, seed: u64) -> Fixture {
    let mut rng = rng_from_seed(seed);
    let family = random_halfspace_family(n0, m, 0.0, seed ^ 0x5a).unwrap();
    // a point with every gate off has an all-zero kernel row
    let mut rows = Vec::with_capacity(p * n0);
    while rows.len() < p * n0 {
        let row: Vec<f64> = (0..n0).map(|_| StandardNormal.sample(&mut rng)).collect();
        if family.evaluate_one(&row).unwrap().iter().any(|&g| g > 0.0) {
            rows.extend(row);
        }
    }
    let x = DMatrix::from_row_slice(p, n0, &rows);
    let teacher: Vec<f64> = (0..n0).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = DVector::from_fn(p, |i, _| {
        let s: f64 = (0..n0).map(|k| x[(i, k)] * teacher[k]).sum();
        s.tanh() + 0.3 * x[(i, 0)].powi(2)
    });
    let gates = family.evaluate(&x).unwrap();
    let k0 = SymMatrix::symmetrized(input_kernel(&x, &x, sigma).unwrap());
    Fixture {
        x,
        gates,
        k0,
        y,
        family,
    }
}

fn random_spd(d: usize, scale: f64, seed: u64) -> SymMatrix {
    let mut rng = rng_from_seed(seed);
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let mut m = &a * a.transpose() * (0.1 * scale / d as f64);
    for i in 0..d {
        m[(i, i)] += scale;
    }
    SymMatrix::symmetrized(m)
}

fn fd_check(problem: &Problem, us: &[SymMatrix]) {
    let eval = problem.evaluate(us).unwrap();
    for (l, u) in us.iter().enumerate() {
        let d = u.dim();
        for (i, j) in [(0, 0), (0, d - 1), (d / 2, d / 3), (d - 1, d - 1)] {
            let h = 1e-6;
            let shifted = |s: f64| {
                let mut m = u.as_matrix().clone();
                m[(i, j)] += s;
                if i != j {
                    m[(j, i)] += s;
                }
                let mut v = us.to_vec();
                v[l] = SymMatrix::symmetrized(m);
                problem.evaluate(&v).unwrap().value
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = &eval.grads[l];
            let analytic = if i == j {
                g[(i, i)]
            } else {
                g[(i, j)] + g[(j, i)]
            };
            let scale = analytic.abs().max(1.0);
            assert!(
                (fd - analytic).abs() < 1e-5 * scale,
                "layer {l} ({i},{j}): fd {fd} vs {analytic}"
            );
        }
    }
}

#[test]
fn single_layer_gradient_matches_finite_differences() {
    let f = fixture(5, 4, 12, 1.3, 1);
    let problem = Problem::new(&f.gates, &f.k0, &f.y, 20, 1.3, 1).unwrap();
    fd_check(&problem, &[random_spd(4, 1.5, 2)]);
    fd_check(&problem.with_temperature(0.1), &[random_spd(4, 0.8, 3)]);
}

#[test]
fn deep_gradient_matches_finite_differences() {
    let f = fixture(4, 3, 14, 0.9, 4);
    let problem = Problem::new(&f.gates, &f.k0, &f.y, 15, 0.9, 2).unwrap();
    fd_check(&problem, &[random_spd(3, 0.9, 5), random_spd(9, 0.7, 6)]);
    let problem3 = Problem::new(&f.gates, &f.k0, &f.y, 15, 0.9, 3)
        .unwrap()
        .with_temperature(0.05);
    fd_check(
        &problem3,
        &[
            random_spd(3, 1.1, 7),
            random_spd(9, 0.7, 8),
            random_spd(27, 0.5, 9),
        ],
    );
}

#[test]
fn scalar_order_parameter_matches_closed_form() {
    // M = 1 with the gate always on: u = σ²[1 − (P − YᵀK0⁻¹Y/u)/N]
    let (p, n, sigma) = (6, 10, 0.8);
    let f = fixture(8, 1, p, sigma, 10);
    let gates = DMatrix::from_element(1, p, 1.0);
    let y2 =
        f.y.dot(&f.k0.as_matrix().clone().cholesky().unwrap().solve(&f.y));
    let s2 = sigma * sigma;
    let b = s2 * (1.0 - p as f64 / n as f64);
    let u_exact = 0.5 * (b + (b * b + 4.0 * s2 * y2 / n as f64).sqrt());
    for mode in [Mode::FixedPoint, Mode::Minimize] {
        let cfg = SolverConfig {
            mode,
            ..Default::default()
        };
        let ops = solve_order_params_l1(&gates, &f.k0, &f.y, n, sigma, &cfg).unwrap();
        let u = ops.u[0][(0, 0)];
        assert!(
            (u - u_exact).abs() < 1e-8 * u_exact,
            "{mode:?}: {u} vs {u_exact}"
        );
        assert!((ops.duals[0][(0, 0)] - (s2 / u - 1.0)).abs() < 1e-8);
    }
}

#[test]
fn fixed_point_and_minimizer_agree() {
    let f = fixture(6, 4, 18, 1.0, 11);
    let cfg = SolverConfig {
        mode: Mode::Both,
        ..Default::default()
    };
    let ops = solve_order_params_l1(&f.gates, &f.k0, &f.y, 12, 1.0, &cfg).unwrap();
    assert!(ops.diagnostics.converged);
    assert!(
        ops.diagnostics.agreement.unwrap() < 1e-6,
        "{:?}",
        ops.diagnostics
    );
}

#[test]
fn identity_leading_term_coincides_at_unit_sigma() {
    let f = fixture(6, 3, 10, 1.0, 12);
    let a = SolverConfig {
        mode: Mode::FixedPoint,
        ..Default::default()
    };
    let b = SolverConfig {
        leading_term: LeadingTerm::Identity,
        ..a.clone()
    };
    let ua = solve_order_params_l1(&f.gates, &f.k0, &f.y, 9, 1.0, &a).unwrap();
    let ub = solve_order_params_l1(&f.gates, &f.k0, &f.y, 9, 1.0, &b).unwrap();
    assert!((ua.u[0].as_matrix() - ub.u[0].as_matrix()).norm() < 1e-7);
}

#[test]
fn wide_limit_recovers_gp() {
    let sigma = 0.7;
    let f = fixture(5, 3, 10, sigma, 13);
    for depth in [1, 2] {
        let cfg = SolverConfig::default();
        let ops = solve_order_params_deep(&f.gates, &f.k0, &f.y, 1_000_000_000, sigma, depth, &cfg)
            .unwrap();
        for u in &ops.u {
            let target = SymMatrix::scaled_identity(u.dim(), sigma * sigma);
            let rel = (u.as_matrix() - target.as_matrix()).norm() / target.frobenius_norm();
            assert!(rel < 1e-6, "depth {depth}: {rel}");
        }
    }
}

#[test]
fn gp_order_parameters_give_gp_kernel() {
    let sigma = 1.2;
    let f = fixture(5, 3, 9, sigma, 14);
    let x_test = f.x.rows(0, 4).map(|v| v * 0.5 + 0.1);
    for depth in [1, 2, 3] {
        let ops = OrderParameterSet::gp_limit(depth, 3, sigma);
        let r = renorm_kernel(&ops, &f.family, &f.x, &x_test).unwrap();
        let g = gp_kernel(&f.family, &f.x, &x_test, sigma, depth).unwrap();
        assert!(
            (r.k_train.as_matrix() - g.k_train.as_matrix()).norm()
                < 1e-10 * g.k_train.frobenius_norm()
        );
        assert!((&r.k_test - &g.k_test).norm() < 1e-10 * g.k_test.norm());
        assert!((&r.k_diag_test - &g.k_diag_test).norm() < 1e-10 * g.k_diag_test.norm());
    }
}

#[test]
fn solved_kernel_matches_problem_kernel() {
    let sigma = 1.0;
    let f = fixture(12, 3, 12, sigma, 15);
    let cfg = SolverConfig {
        mode: Mode::Minimize,
        ..Default::default()
    };
    let ops = solve_order_params_deep(&f.gates, &f.k0, &f.y, 8, sigma, 2, &cfg).unwrap();
    let problem = Problem::new(&f.gates, &f.k0, &f.y, 8, sigma, 2).unwrap();
    let k = problem.kernel(&ops.u).unwrap();
    let bundle = renorm_kernel(&ops, &f.family, &f.x, &f.x).unwrap();
    assert!((k.as_matrix() - bundle.k_train.as_matrix()).norm() < 1e-10 * k.frobenius_norm());
    for i in 0..12 {
        assert!((bundle.k_diag_test[i] - k[(i, i)]).abs() < 1e-10 * k[(i, i)]);
    }
}

#[test]
fn deep_solution_is_stationary() {
    let sigma = 1.0;
    let f = fixture(6, 2, 14, sigma, 16);
    let cfg = SolverConfig {
        mode: Mode::Minimize,
        ..Default::default()
    };
    let ops = solve_order_params_deep(&f.gates, &f.k0, &f.y, 6, sigma, 2, &cfg).unwrap();
    assert!(ops.diagnostics.converged, "{:?}", ops.diagnostics);
    assert!(ops.diagnostics.grad_norm < 1e-6 * 6.0);
}

#[test]
fn rejects_oversized_and_bad_modes() {
    let f = fixture(4, 7, 8, 1.0, 17);
    let cfg = SolverConfig::default();
    assert!(matches!(
        solve_order_params_deep(&f.gates, &f.k0, &f.y, 5, 1.0, 3, &cfg),
        Err(Error::BudgetExceeded {
            requested: 343,
            limit: 256
        })
    ));
    let fp = SolverConfig {
        mode: Mode::FixedPoint,
        ..cfg
    };
    assert!(matches!(
        solve_order_params_deep(&f.gates, &f.k0, &f.y, 5, 1.0, 2, &fp),
        Err(Error::Config(_))
    ));
    let bad = SolverConfig {
        damping: 0.0,
        ..SolverConfig::default()
    };
    assert!(solve_order_params_l1(&f.gates, &f.k0, &f.y, 5, 1.0, &bad).is_err());
}

#[test]
fn order_parameters_serialize() {
    let ops = OrderParameterSet::gp_limit(2, 2, 1.0);
    let json = ops.to_json(&SolverConfig::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["order_parameters"]["u"][1].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["mode"], "auto");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solution_is_psd_and_kernel_positive(seed in 0u64..1000, n in 4usize..40, sigma in 0.5f64..1.5) {
        let f = fixture(6, 3, 10, sigma, seed);
        // random gates can leave K singular at T = 0
        let cfg = SolverConfig { temperature: 1e-4, ..SolverConfig::default() };
        let ops = solve_order_params_l1(&f.gates, &f.k0, &f.y, n, sigma, &cfg).unwrap();
        prop_assert!(ops.u[0].eigenvalues().min() > 0.0);
        let bundle = renorm_kernel(&ops, &f.family, &f.x, &f.x).unwrap();
        prop_assert!(bundle.k_train.eigenvalues().min() > -1e-9 * bundle.k_train.eigenvalues().max());
        let stats = predict(&ops, &bundle, &f.y).unwrap();
        prop_assert!(stats.variance.iter().all(|&v| v >= 0.0));
    }
}
