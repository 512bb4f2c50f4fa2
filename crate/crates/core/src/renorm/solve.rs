use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::hamiltonian::{Evaluation, Problem};
use super::{duals_of, Diagnostics, LeadingTerm, Mode, OrderParameterSet, SolverConfig};
use crate::error::{Error, Result};
use crate::gatings::GatingFamily;
use crate::gp::input_kernel;
use crate::network::Architecture;
use crate::numerics::{lbfgs, psd_project, LbfgsConfig, PsdSqrt, SymMatrix};

const PSD_FLOOR: f64 = 1e-12;
const POLISH_MAX_PARAMS: usize = 160;
const POLISH_STEPS: usize = 6;

/// Solves the single-layer order parameter `U` (M×M) for gates `G` (M×P),
/// input kernel `K0` and labels `Y`.
pub fn solve_order_params_l1(
    gates: &DMatrix<f64>,
    k0: &SymMatrix,
    y: &DVector<f64>,
    width: usize,
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<OrderParameterSet> {
    solve_order_params_deep(gates, k0, y, width, sigma, 1, cfg)
}

/// Solves `U_1..U_L` for a depth-`L` network. Only minimization is
/// available for `L > 1`; mode `auto` selects it.
pub fn solve_order_params_deep(
    gates: &DMatrix<f64>,
    k0: &SymMatrix,
    y: &DVector<f64>,
    width: usize,
    sigma: f64,
    depth: usize,
    cfg: &SolverConfig,
) -> Result<OrderParameterSet> {
    cfg.validate()?;
    let problem =
        Problem::new(gates, k0, y, width, sigma, depth)?.with_temperature(cfg.temperature);
    let top = u32::try_from(depth)
        .ok()
        .and_then(|d| gates.nrows().checked_pow(d))
        .ok_or_else(|| Error::Overflow(format!("M^L for M = {}, L = {depth}", gates.nrows())))?;
    if top > cfg.max_order_dim {
        return Err(Error::BudgetExceeded {
            requested: top,
            limit: cfg.max_order_dim,
        });
    }
    let mode = match (cfg.mode, depth) {
        (Mode::FixedPoint | Mode::Both, d) if d > 1 => {
            return Err(Error::Config(
                "fixed-point iteration needs depth 1; use mode `minimize`".into(),
            ))
        }
        (Mode::Auto, d) if d > 1 => Mode::Minimize,
        (m, _) => m,
    };

    let (u, mut diag) = match mode {
        Mode::FixedPoint => fixed_point(&problem, cfg)?,
        Mode::Minimize => minimize(&problem, cfg, None)?,
        Mode::Both => {
            let (u_fp, d_fp) = fixed_point(&problem, cfg)?;
            let (u_min, mut d_min) = minimize(&problem, cfg, None)?;
            let diff =
                (u_fp[0].as_matrix() - u_min[0].as_matrix()).norm() / u_fp[0].frobenius_norm();
            d_min.method = "both".into();
            d_min.iterations += d_fp.iterations;
            d_min.residual = d_fp.residual;
            d_min.damping = d_fp.damping;
            d_min.agreement = Some(diff);
            d_min.converged &= d_fp.converged;
            (
                u_fp,
                Diagnostics {
                    hamiltonian: d_fp.hamiltonian,
                    grad_norm: d_fp.grad_norm,
                    ..d_min
                },
            )
        }
        Mode::Auto => {
            match fixed_point(&problem, cfg) {
                Ok((u, d)) if d.converged => (u, d),
                outcome => {
                    let start = outcome.ok().map(|(u, _)| u);
                    log::info!("fixed-point iteration did not converge, minimizing the Hamiltonian instead");
                    let (u, mut d) = minimize(&problem, cfg, start)?;
                    d.method = "auto_minimize".into();
                    (u, d)
                }
            }
        }
    };
    if !diag.converged {
        log::warn!(
            "order parameters not converged ({}): residual {:?}, gradient norm {:.3e}",
            diag.method,
            diag.residual,
            diag.grad_norm
        );
    }
    diag.iterations = diag.iterations.max(1);
    let duals = duals_of(&u, sigma)?;
    Ok(OrderParameterSet {
        depth,
        n_gates: gates.nrows(),
        width,
        sigma,
        temperature: cfg.temperature,
        u,
        duals,
        diagnostics: diag,
    })
}

/// Evaluates the gates of `family` on `x` and solves at the depth, width
/// and σ of `arch`.
pub fn solve_order_params(
    family: &GatingFamily,
    arch: &Architecture,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<OrderParameterSet> {
    let gates = family.evaluate(x)?;
    let k0 = SymMatrix::symmetrized(input_kernel(x, x, arch.sigma)?);
    solve_order_params_deep(&gates, &k0, y, arch.width, arch.sigma, arch.depth, cfg)
}

fn stationarity_target(problem: &Problem, cfg: &SolverConfig) -> f64 {
    cfg.grad_tol * problem.width as f64 / (problem.sigma * problem.sigma)
}

/// Self-consistent map `F(U) = c[I − (1/NM)U^{1/2}(A − B)U^{1/2}]`, with
/// `(A − B)/2M = ∂(data term)/∂U` and `c = σ²` or `1`.
fn fixed_point_map(
    problem: &Problem,
    u: &SymMatrix,
    lead: LeadingTerm,
) -> Result<(SymMatrix, Evaluation)> {
    let eval = problem.evaluate(std::slice::from_ref(u))?;
    let n = problem.width as f64;
    let s2 = problem.sigma * problem.sigma;
    let mut data_grad = eval.grads[0].clone();
    let inv = super::hamiltonian::spd_log_det_inverse(u)?.1;
    data_grad += inv * (0.5 * n);
    for i in 0..data_grad.nrows() {
        data_grad[(i, i)] -= n / (2.0 * s2);
    }
    let root = PsdSqrt::new(u)?.sqrt().into_inner();
    let dim = u.dim();
    let inner = DMatrix::identity(dim, dim) - &root * data_grad * &root * (2.0 / n);
    let lead = match lead {
        LeadingTerm::Sigma2Identity => s2,
        LeadingTerm::Identity => 1.0,
    };
    Ok((SymMatrix::symmetrized(inner * lead), eval))
}

fn fixed_point(problem: &Problem, cfg: &SolverConfig) -> Result<(Vec<SymMatrix>, Diagnostics)> {
    let s2 = problem.sigma * problem.sigma;
    let mut u = SymMatrix::scaled_identity(problem.n_gates(), s2);
    let mut eta = cfg.damping;
    let mut prev = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let (next, eval) = fixed_point_map(problem, &u, cfg.leading_term)?;
        residual = (next.as_matrix() - u.as_matrix()).norm() / u.frobenius_norm();
        if !residual.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it,
                residual,
            });
        }
        if residual <= cfg.tol {
            let u_final = psd_project(&next, PSD_FLOOR);
            let final_eval = problem
                .evaluate(std::slice::from_ref(&u_final))
                .unwrap_or(eval);
            let diag = Diagnostics {
                method: "fixed_point".into(),
                iterations: it,
                residual: Some(residual),
                damping: Some(eta),
                grad_norm: final_eval.grad_norm(),
                hamiltonian: final_eval.value,
                agreement: None,
                converged: true,
            };
            return Ok((vec![u_final], diag));
        }
        if residual > prev {
            eta = (eta * 0.5).max(cfg.min_damping);
        }
        prev = residual;
        let step = u.as_matrix() + (next.as_matrix() - u.as_matrix()) * eta;
        u = psd_project(&SymMatrix::symmetrized(step), PSD_FLOOR);
    }
    let eval = problem.evaluate(std::slice::from_ref(&u))?;
    Ok((
        vec![u],
        Diagnostics {
            method: "fixed_point".into(),
            iterations: cfg.max_iters,
            residual: Some(residual),
            damping: Some(eta),
            grad_norm: eval.grad_norm(),
            hamiltonian: eval.value,
            agreement: None,
            converged: false,
        },
    ))
}

fn tril_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn factors_from_flat(x: &DVector<f64>, dims: &[usize]) -> Vec<DMatrix<f64>> {
    let mut k = 0;
    dims.iter()
        .map(|&d| {
            let mut c = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..=i {
                    c[(i, j)] = x[k];
                    k += 1;
                }
            }
            c
        })
        .collect()
}

fn flat_from_factors(cs: &[DMatrix<f64>]) -> DVector<f64> {
    let mut out = Vec::new();
    for c in cs {
        for i in 0..c.nrows() {
            for j in 0..=i {
                out.push(c[(i, j)]);
            }
        }
    }
    DVector::from_vec(out)
}

fn cholesky_of(u: &SymMatrix) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(u.as_matrix().clone()).map(|c| c.l())
}

/// Minimizes `H` over Cholesky factors `U_l = C_l C_lᵀ` by L-BFGS, then
/// polishes with Newton steps on a finite-difference Hessian when the
/// parameter count is small.
fn minimize(
    problem: &Problem,
    cfg: &SolverConfig,
    start: Option<Vec<SymMatrix>>,
) -> Result<(Vec<SymMatrix>, Diagnostics)> {
    let s2 = problem.sigma * problem.sigma;
    let dims: Vec<usize> = (1..=problem.depth).map(|l| problem.order_dim(l)).collect();
    let gp_start = || {
        dims.iter()
            .map(|&d| DMatrix::identity(d, d) * problem.sigma)
            .collect::<Vec<_>>()
    };
    let c0 = start
        .and_then(|us| us.iter().map(cholesky_of).collect::<Option<Vec<_>>>())
        .unwrap_or_else(gp_start);

    let objective = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let cs = factors_from_flat(x, &dims);
        let us: Vec<SymMatrix> = cs
            .iter()
            .map(|c| SymMatrix::symmetrized(c * c.transpose()))
            .collect();
        let eval = problem.evaluate(&us)?;
        let gcs: Vec<DMatrix<f64>> = eval
            .grads
            .iter()
            .zip(&cs)
            .map(|(g, c)| g * c * 2.0)
            .collect();
        Ok((eval.value, flat_from_factors(&gcs)))
    };
    let target = stationarity_target(problem, cfg);
    let lcfg = LbfgsConfig {
        max_iters: cfg.max_minimize_iters,
        grad_tol: 1e-3 * target * problem.sigma,
        history: 20,
    };
    let min = lbfgs(objective, flat_from_factors(&c0), &lcfg)?;
    let cs = factors_from_flat(&min.x, &dims);
    let mut us: Vec<SymMatrix> = cs
        .iter()
        .map(|c| SymMatrix::symmetrized(c * c.transpose()))
        .collect();
    let mut eval = problem.evaluate(&us)?;
    let n_params: usize = dims.iter().map(|&d| tril_len(d)).sum();
    if n_params <= POLISH_MAX_PARAMS {
        (us, eval) = newton_polish(problem, us, eval, s2)?;
    }
    let grad_norm = eval.grad_norm();
    Ok((
        us,
        Diagnostics {
            method: "minimize".into(),
            iterations: min.iterations,
            residual: None,
            damping: None,
            grad_norm,
            hamiltonian: eval.value,
            agreement: None,
            converged: grad_norm <= target,
        },
    ))
}

/// Gradient in the coordinates `u_ij, i ≤ j` of symmetric matrices.
fn sym_grad(grads: &[DMatrix<f64>]) -> DVector<f64> {
    let mut out = Vec::new();
    for g in grads {
        for i in 0..g.nrows() {
            for j in i..g.ncols() {
                out.push(if i == j {
                    g[(i, i)]
                } else {
                    g[(i, j)] + g[(j, i)]
                });
            }
        }
    }
    DVector::from_vec(out)
}

fn perturb(us: &[SymMatrix], k: usize, h: f64) -> Vec<SymMatrix> {
    let mut out = us.to_vec();
    let mut k = k;
    for u in out.iter_mut() {
        let d = u.dim();
        if k >= tril_len(d) {
            k -= tril_len(d);
            continue;
        }
        let mut m = u.as_matrix().clone();
        'found: for i in 0..d {
            for j in i..d {
                if k == 0 {
                    m[(i, j)] += h;
                    if i != j {
                        m[(j, i)] += h;
                    }
                    break 'found;
                }
                k -= 1;
            }
        }
        *u = SymMatrix::symmetrized(m);
        break;
    }
    out
}

fn newton_polish(
    problem: &Problem,
    mut us: Vec<SymMatrix>,
    mut eval: Evaluation,
    scale: f64,
) -> Result<(Vec<SymMatrix>, Evaluation)> {
    for _ in 0..POLISH_STEPS {
        let g = sym_grad(&eval.grads);
        let n = g.len();
        let h = 1e-5 * scale;
        let mut hess = DMatrix::zeros(n, n);
        for k in 0..n {
            let (Ok(plus), Ok(minus)) = (
                problem.evaluate(&perturb(&us, k, h)),
                problem.evaluate(&perturb(&us, k, -h)),
            ) else {
                return Ok((us, eval));
            };
            let col = (sym_grad(&plus.grads) - sym_grad(&minus.grads)) / (2.0 * h);
            hess.set_column(k, &col);
        }
        let hess = 0.5 * (&hess + hess.transpose());
        let eig = SymmetricEigen::new(hess);
        if eig.eigenvalues.min() <= 0.0 {
            return Ok((us, eval));
        }
        let q = &eig.eigenvectors;
        let step =
            -(q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * q.transpose() * &g);

        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-4 {
            let trial = apply_sym_step(&us, &step, t);
            if let Ok(e) = problem.evaluate(&trial) {
                if e.grad_norm() < eval.grad_norm()
                    && e.value <= eval.value + 1e-12 * eval.value.abs().max(1.0)
                {
                    us = trial;
                    eval = e;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((us, eval))
}

fn apply_sym_step(us: &[SymMatrix], step: &DVector<f64>, t: f64) -> Vec<SymMatrix> {
    let mut k = 0;
    us.iter()
        .map(|u| {
            let mut m = u.as_matrix().clone();
            let d = u.dim();
            for i in 0..d {
                for j in i..d {
                    m[(i, j)] += t * step[k];
                    if i != j {
                        m[(j, i)] += t * step[k];
                    }
                    k += 1;
                }
            }
            SymMatrix::symmetrized(m)
        })
        .collect()
}
