//! Finite-width kernel renormalization.
//!
//! Integrating out the weights of a GGDLN leaves an effective Hamiltonian
//! over order-parameter matrices `U_l` (dimension `M^l`, `l = 1..L`):
//!
//! ```text
//! H = ½YᵀK̃⁻¹Y + ½log det K̃ − (N/2)Σ_l log det U_l + (N/2σ²)Σ_l Tr U_l
//! ```
//!
//! where the renormalized kernel `K̃` replaces the GP gating factor by
//! quadratic forms in the `U_l`. The saddle point of `H` gives the
//! finite-width posterior predictor.

mod hamiltonian;
mod kernel;
mod solve;

use serde::{Deserialize, Serialize};

pub use hamiltonian::{hamiltonian_l1, lift_gates, Evaluation, Problem};
pub use kernel::{predict, renorm_block, renorm_diag, renorm_kernel, renorm_kernel_from_gates};
pub use solve::{solve_order_params, solve_order_params_deep, solve_order_params_l1};

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Which solution path the solver takes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Damped self-consistent iteration only.
    FixedPoint,
    /// Direct minimization of the Hamiltonian only.
    Minimize,
    /// Both paths; reports their relative disagreement.
    Both,
    /// Fixed-point iteration, falling back to minimization if it stalls.
    #[default]
    Auto,
}

/// Leading term of the single-layer self-consistent equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadingTerm {
    /// `U = σ²[I − (1/NM)U^{1/2}(A − B)U^{1/2}]`, the stationarity condition
    /// of the Hamiltonian.
    #[default]
    Sigma2Identity,
    /// `U = I − (1/NM)U^{1/2}(A − B)U^{1/2}`.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub damping: f64,
    pub min_damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub mode: Mode,
    pub leading_term: LeadingTerm,
    /// Likelihood temperature `T`; the kernel becomes `K̃ + T·I`. Zero is
    /// the noiseless limit.
    pub temperature: f64,
    /// Largest admissible order-parameter dimension `M^L`.
    pub max_order_dim: usize,
    /// Stationarity target `‖∂H/∂U‖_F ≤ grad_tol·N/σ²` for minimization.
    pub grad_tol: f64,
    pub max_minimize_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            min_damping: 1.0 / 64.0,
            tol: 1e-8,
            max_iters: 10_000,
            mode: Mode::Auto,
            leading_term: LeadingTerm::Sigma2Identity,
            temperature: 0.0,
            max_order_dim: 256,
            grad_tol: 1e-6,
            max_minimize_iters: 5_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.damping > 0.0
            && self.damping <= 1.0
            && self.min_damping > 0.0
            && self.min_damping <= self.damping
            && self.tol > 0.0
            && self.max_iters > 0
            && self.temperature >= 0.0
            && self.grad_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    pub iterations: usize,
    /// Final relative fixed-point residual `‖F(U) − U‖_F/‖U‖_F`, when the
    /// fixed-point path ran.
    pub residual: Option<f64>,
    pub damping: Option<f64>,
    /// `‖∂H/∂U‖_F` summed over layers at the returned point.
    pub grad_norm: f64,
    pub hamiltonian: f64,
    /// Relative Frobenius distance between the two solution paths (mode `both`).
    pub agreement: Option<f64>,
    pub converged: bool,
}

/// Solved order parameters `U_1..U_L`, their duals `H_l = σ²U_l⁻¹ − I`,
/// and solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParameterSet {
    pub depth: usize,
    pub n_gates: usize,
    pub width: usize,
    pub sigma: f64,
    pub temperature: f64,
    pub u: Vec<SymMatrix>,
    pub duals: Vec<SymMatrix>,
    pub diagnostics: Diagnostics,
}

impl OrderParameterSet {
    /// The order parameters of the GP limit, `U_l = σ²I`.
    pub fn gp_limit(depth: usize, n_gates: usize, sigma: f64) -> Self {
        let u: Vec<SymMatrix> = (1..=depth)
            .map(|l| SymMatrix::scaled_identity(n_gates.pow(l as u32), sigma * sigma))
            .collect();
        let duals = u
            .iter()
            .map(|m| SymMatrix::scaled_identity(m.dim(), 0.0))
            .collect();
        OrderParameterSet {
            depth,
            n_gates,
            width: usize::MAX,
            sigma,
            temperature: 0.0,
            u,
            duals,
            diagnostics: Diagnostics {
                method: "gp_limit".into(),
                converged: true,
                ..Default::default()
            },
        }
    }

    /// JSON document with row-major matrices, diagnostics and the solver
    /// configuration that produced them.
    pub fn to_json(&self, cfg: &SolverConfig) -> Result<String> {
        let doc = serde_json::json!({ "order_parameters": self, "config": cfg });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

pub(crate) fn duals_of(u: &[SymMatrix], sigma: f64) -> Result<Vec<SymMatrix>> {
    u.iter()
        .map(|m| {
            let n = m.dim();
            let chol = nalgebra::Cholesky::new(m.as_matrix().clone()).ok_or(Error::NotPsd {
                min_eig: m.eigenvalues().min(),
                tol: 0.0,
            })?;
            let inv = chol.inverse() * (sigma * sigma) - nalgebra::DMatrix::identity(n, n);
            Ok(SymMatrix::symmetrized(inv))
        })
        .collect()
}

#[cfg(test)]
mod tests;
