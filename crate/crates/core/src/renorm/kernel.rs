use nalgebra::{DMatrix, DVector};

use super::hamiltonian::{lift_gates, quadratic_kernel};
use super::OrderParameterSet;
use crate::error::{Error, Result};
use crate::gatings::GatingFamily;
use crate::gp::{input_kernel, KernelBundle, KernelKind, KernelMeta};
use crate::numerics::SymMatrix;
use crate::predictor::{kernel_predict, PredictorStats};

fn check_gates(ops: &OrderParameterSet, g: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if g.nrows() != ops.n_gates || g.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "gates {}x{} for {} points and M = {}",
            g.nrows(),
            g.ncols(),
            x.nrows(),
            ops.n_gates
        )));
    }
    Ok(())
}

/// Renormalized kernel block `(W_aᵀ U_L W_b / M^L) ∘ K0(X_a, X_b)`.
pub fn renorm_block(
    ops: &OrderParameterSet,
    g_a: &DMatrix<f64>,
    x_a: &DMatrix<f64>,
    g_b: &DMatrix<f64>,
    x_b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_gates(ops, g_a, x_a)?;
    check_gates(ops, g_b, x_b)?;
    let wa = lift_gates(g_a, &ops.u)?;
    let wb = lift_gates(g_b, &ops.u)?;
    let k0 = input_kernel(x_a, x_b, ops.sigma)?;
    Ok(quadratic_kernel(&wa, ops.u[ops.depth - 1].as_matrix(), &wb).component_mul(&k0))
}

/// `K̃(x, x)` for every row of `x`.
pub fn renorm_diag(
    ops: &OrderParameterSet,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_gates(ops, g, x)?;
    let w = lift_gates(g, &ops.u)?;
    let u = ops.u[ops.depth - 1].as_matrix();
    let uw = u * &w;
    let s2 = ops.sigma * ops.sigma;
    let n0 = x.ncols() as f64;
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        w.column(i).dot(&uw.column(i)) / u.nrows() as f64 * s2 * x.row(i).norm_squared() / n0
    }))
}

pub fn renorm_kernel_from_gates(
    ops: &OrderParameterSet,
    g_train: &DMatrix<f64>,
    x_train: &DMatrix<f64>,
    g_test: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    gating: &str,
) -> Result<KernelBundle> {
    Ok(KernelBundle {
        k_train: SymMatrix::symmetrized(renorm_block(ops, g_train, x_train, g_train, x_train)?),
        k_test: renorm_block(ops, g_test, x_test, g_train, x_train)?,
        k_diag_test: renorm_diag(ops, g_test, x_test)?,
        kind: KernelKind::Renormalized,
        meta: KernelMeta {
            sigma: ops.sigma,
            depth: ops.depth,
            n_gates: ops.n_gates,
            gating: gating.into(),
        },
    })
}

/// Renormalized kernel blocks for a gating family. Reduces to the GP
/// kernel when every `U_l = σ²I`.
pub fn renorm_kernel(
    ops: &OrderParameterSet,
    family: &GatingFamily,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
) -> Result<KernelBundle> {
    let g = family.evaluate(x_train)?;
    let gt = family.evaluate(x_test)?;
    renorm_kernel_from_gates(ops, &g, x_train, &gt, x_test, family.kind_name())
}

/// Finite-width predictor mean and variance at the temperature the order
/// parameters were solved at.
pub fn predict(
    ops: &OrderParameterSet,
    bundle: &KernelBundle,
    y: &DVector<f64>,
) -> Result<PredictorStats> {
    kernel_predict(
        &bundle.k_train,
        &bundle.k_test,
        &bundle.k_diag_test,
        y,
        ops.temperature,
    )
}
