//! Posterior predictor statistics shared by the GP and renormalized
//! kernels: mean `kᵀK⁻¹Y`, variance `K(x,x) − kᵀK⁻¹k`, bias/variance
//! decomposition and the Gaussian error rate for ±1 labels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{erfc, pinv_solve, KernelFactor, SymMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
    pub eps_g: f64,
}

impl PredictorStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

fn check(
    k_train: &SymMatrix,
    k_test: &DMatrix<f64>,
    k_diag: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    let p = k_train.dim();
    if k_test.ncols() != p || y.len() != p || k_diag.len() != k_test.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "kernel blocks {p}x{p}, {}x{}, diag {} and {} labels",
            k_test.nrows(),
            k_test.ncols(),
            k_diag.len(),
            y.len()
        )));
    }
    Ok(())
}

fn assemble(
    k_test: &DMatrix<f64>,
    k_diag: &DVector<f64>,
    alpha: &DVector<f64>,
    kinv_k: &DMatrix<f64>,
) -> PredictorStats {
    let mean = k_test * alpha;
    let mut clipped = 0.0_f64;
    let variance = (0..k_test.nrows())
        .map(|i| {
            let v = k_diag[i] - k_test.row(i).dot(&kinv_k.column(i).transpose());
            if v < 0.0 {
                clipped = clipped.max(-v);
                0.0
            } else {
                v
            }
        })
        .collect();
    if clipped > 0.0 {
        log::debug!("predictor variance clipped at 0 (largest negative value {clipped:.3e})");
    }
    PredictorStats {
        mean: mean.iter().copied().collect(),
        variance,
    }
}

/// Predictor statistics for kernel `K + T·I` on the training set.
///
/// `temperature = 0` gives the noiseless posterior; positive values add
/// the finite-temperature likelihood noise.
pub fn kernel_predict(
    k_train: &SymMatrix,
    k_test: &DMatrix<f64>,
    k_diag: &DVector<f64>,
    y: &DVector<f64>,
    temperature: f64,
) -> Result<PredictorStats> {
    check(k_train, k_test, k_diag, y)?;
    let shifted = with_ridge(k_train, temperature);
    let factor = KernelFactor::new(&shifted)?;
    let alpha = factor.solve_vec(y)?;
    let kinv_k = factor.solve(&k_test.transpose())?;
    Ok(assemble(k_test, k_diag, &alpha, &kinv_k))
}

/// Same as [`kernel_predict`] at zero temperature with `K⁻¹` replaced by
/// the eigenvalue-truncated pseudo-inverse. Used past the interpolation
/// threshold, where `K` is singular.
pub fn kernel_predict_pinv(
    k_train: &SymMatrix,
    k_test: &DMatrix<f64>,
    k_diag: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<PredictorStats> {
    check(k_train, k_test, k_diag, y)?;
    let alpha = pinv_solve(
        k_train,
        &DMatrix::from_column_slice(y.len(), 1, y.as_slice()),
    );
    let kinv_k = pinv_solve(k_train, &k_test.transpose());
    Ok(assemble(
        k_test,
        k_diag,
        &alpha.column(0).into_owned(),
        &kinv_k,
    ))
}

pub(crate) fn with_ridge(k: &SymMatrix, ridge: f64) -> SymMatrix {
    if ridge == 0.0 {
        return k.clone();
    }
    let mut m = k.as_matrix().clone();
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    SymMatrix::symmetrized(m)
}

/// Test-averaged `(⟨f⟩ − y)²`, `⟨δf²⟩` and their sum.
pub fn bias_variance(stats: &PredictorStats, y_true: &[f64]) -> Result<BiasVariance> {
    if y_true.len() != stats.len() || stats.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            stats.len(),
            y_true.len()
        )));
    }
    let n = y_true.len() as f64;
    let bias = stats
        .mean
        .iter()
        .zip(y_true)
        .map(|(m, y)| (m - y).powi(2))
        .sum::<f64>()
        / n;
    let variance = stats.variance.iter().sum::<f64>() / n;
    Ok(BiasVariance {
        bias,
        variance,
        eps_g: bias + variance,
    })
}

/// Probability that a Gaussian predictor `N(mean, var)` has the wrong sign
/// for label `y ∈ {±1}`. Zero variance falls back to the sign rule.
pub fn point_error_rate(mean: f64, var: f64, y: f64) -> f64 {
    if mean == 0.0 {
        0.5
    } else if var > 0.0 {
        (y + 1.0) / 2.0 - y * 0.5 * erfc(-mean / (2.0 * var).sqrt())
    } else if mean * y > 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Per-point error rates and their mean.
pub fn error_rate(stats: &PredictorStats, y_true: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y_true.len() != stats.len() || stats.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            stats.len(),
            y_true.len()
        )));
    }
    if y_true.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::DomainError(
            "error rate needs labels in {-1, +1}".into(),
        ));
    }
    let rates: Vec<f64> = (0..stats.len())
        .map(|i| point_error_rate(stats.mean[i], stats.variance[i], y_true[i]))
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok((rates, mean))
}
