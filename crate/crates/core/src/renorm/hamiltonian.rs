use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{KernelFactor, PsdSqrt, SymMatrix};

/// Data of one renormalization problem: training gates `G` (M×P), input
/// kernel `K0` (P×P), labels, width and prior scale.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub gates: &'a DMatrix<f64>,
    pub k0: &'a SymMatrix,
    pub y: &'a DVector<f64>,
    pub width: usize,
    pub sigma: f64,
    pub temperature: f64,
    pub depth: usize,
}

/// Hamiltonian value, `∂H/∂U_l` for every layer, and the kernel `K̃ + T·I`
/// it was evaluated on.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub grads: Vec<DMatrix<f64>>,
    pub kernel: SymMatrix,
}

impl Evaluation {
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

impl<'a> Problem<'a> {
    pub fn new(
        gates: &'a DMatrix<f64>,
        k0: &'a SymMatrix,
        y: &'a DVector<f64>,
        width: usize,
        sigma: f64,
        depth: usize,
    ) -> Result<Self> {
        let p = gates.ncols();
        if k0.dim() != p || y.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} gated points, K0 of size {}, {} labels",
                p,
                k0.dim(),
                y.len()
            )));
        }
        if width == 0 || depth == 0 || gates.nrows() == 0 {
            return Err(Error::DomainError(
                "width, depth and gate count must be positive".into(),
            ));
        }
        if !(sigma > 0.0) {
            return Err(Error::DomainError(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Problem {
            gates,
            k0,
            y,
            width,
            sigma,
            temperature: 0.0,
            depth,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn n_gates(&self) -> usize {
        self.gates.nrows()
    }

    /// Dimension `M^l` of the layer-`l` order parameter (1-based).
    pub fn order_dim(&self, layer: usize) -> usize {
        self.n_gates().pow(layer as u32)
    }

    fn check_u(&self, u: &[SymMatrix]) -> Result<()> {
        if u.len() != self.depth {
            return Err(Error::DimensionMismatch(format!(
                "{} order parameters for depth {}",
                u.len(),
                self.depth
            )));
        }
        for (l, m) in u.iter().enumerate() {
            if m.dim() != self.order_dim(l + 1) {
                return Err(Error::DimensionMismatch(format!(
                    "U_{} is {}x{}, expected dimension {}",
                    l + 1,
                    m.dim(),
                    m.dim(),
                    self.order_dim(l + 1)
                )));
            }
        }
        Ok(())
    }

    /// `K̃ + T·I` at the given order parameters.
    pub fn kernel(&self, u: &[SymMatrix]) -> Result<SymMatrix> {
        self.check_u(u)?;
        let w = lift_gates(self.gates, u)?;
        let mut k = quadratic_kernel(&w, u[self.depth - 1].as_matrix(), &w)
            .component_mul(self.k0.as_matrix());
        for i in 0..k.nrows() {
            k[(i, i)] += self.temperature;
        }
        Ok(SymMatrix::symmetrized(k))
    }

    /// Hamiltonian and its gradient with respect to every `U_l`.
    pub fn evaluate(&self, u: &[SymMatrix]) -> Result<Evaluation> {
        self.check_u(u)?;
        let depth = self.depth;
        let m = self.n_gates();
        let norm = (m as f64).powi(depth as i32);
        let g = self.gates;

        let roots: Vec<PsdSqrt> = u[..depth - 1]
            .iter()
            .map(PsdSqrt::new)
            .collect::<Result<_>>()?;
        let root_mats: Vec<DMatrix<f64>> = roots.iter().map(|r| r.sqrt().into_inner()).collect();
        let mut ws = vec![g.clone()];
        for r in &root_mats {
            let z = r * ws.last().unwrap();
            ws.push(kron_columns(&z, g));
        }
        let wl = ws.last().unwrap();
        let ul = u[depth - 1].as_matrix();

        let mut k = quadratic_kernel(wl, ul, wl).component_mul(self.k0.as_matrix());
        for i in 0..k.nrows() {
            k[(i, i)] += self.temperature;
        }
        let factor = KernelFactor::from_matrix(&k)?;
        let alpha = factor.solve_vec(self.y)?;
        let kinv = factor.inverse()?;
        let mut value = 0.5 * self.y.dot(&alpha) + 0.5 * factor.log_det();

        let gamma = (kinv - &alpha * alpha.transpose()) * 0.5;
        let gk = gamma.component_mul(self.k0.as_matrix());

        let mut grads = vec![DMatrix::zeros(0, 0); depth];
        grads[depth - 1] = wl * &gk * wl.transpose() / norm;
        let mut dw = ul * wl * &gk * (2.0 / norm);
        for l in (0..depth - 1).rev() {
            let dz = contract_columns(&dw, g);
            let dr = &dz * ws[l].transpose();
            grads[l] = roots[l].pullback(&dr);
            dw = &root_mats[l] * dz;
        }

        let n = self.width as f64;
        let s2 = self.sigma * self.sigma;
        for (l, ul) in u.iter().enumerate() {
            let (log_det, inv) = spd_log_det_inverse(ul)?;
            value += -0.5 * n * log_det + n / (2.0 * s2) * ul.trace();
            let grad = &mut grads[l];
            *grad -= inv * (0.5 * n);
            for i in 0..grad.nrows() {
                grad[(i, i)] += n / (2.0 * s2);
            }
            *grad = 0.5 * (&*grad + grad.transpose());
        }
        Ok(Evaluation {
            value,
            grads,
            kernel: SymMatrix::symmetrized(k),
        })
    }
}

/// Single-layer Hamiltonian
/// `½YᵀK̃⁻¹Y + ½log det K̃ − (N/2)log det U + (N/2σ²)Tr U` with
/// `K̃ = (GᵀUG/M)∘K0 + T·I`.
pub fn hamiltonian_l1(
    u: &SymMatrix,
    gates: &DMatrix<f64>,
    k0: &SymMatrix,
    y: &DVector<f64>,
    width: usize,
    sigma: f64,
    temperature: f64,
) -> Result<f64> {
    let problem = Problem::new(gates, k0, y, width, sigma, 1)?.with_temperature(temperature);
    Ok(problem.evaluate(std::slice::from_ref(u))?.value)
}

/// Lifted gate features `W_L` (M^L × P): `W_1 = G` and
/// `W_{l+1} = (U_l^{1/2} W_l) ⊗ g` column by column, index `a·M + n`.
/// Only `U_1..U_{L−1}` are used.
pub fn lift_gates(gates: &DMatrix<f64>, u: &[SymMatrix]) -> Result<DMatrix<f64>> {
    let mut w = gates.clone();
    for ul in &u[..u.len().saturating_sub(1)] {
        if ul.dim() != w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "order parameter of dimension {} for features of dimension {}",
                ul.dim(),
                w.nrows()
            )));
        }
        let z = PsdSqrt::new(ul)?.sqrt().into_inner() * &w;
        w = kron_columns(&z, gates);
    }
    Ok(w)
}

/// `(W_aᵀ U W_b)/dim(U)`.
pub(crate) fn quadratic_kernel(
    wa: &DMatrix<f64>,
    u: &DMatrix<f64>,
    wb: &DMatrix<f64>,
) -> DMatrix<f64> {
    wa.transpose() * u * wb / u.nrows() as f64
}

fn kron_columns(z: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    DMatrix::from_fn(z.nrows() * m, z.ncols(), |r, c| {
        z[(r / m, c)] * g[(r % m, c)]
    })
}

/// Adjoint of [`kron_columns`] in its first argument.
fn contract_columns(dw: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    DMatrix::from_fn(dw.nrows() / m, dw.ncols(), |a, c| {
        (0..m).map(|n| dw[(a * m + n, c)] * g[(n, c)]).sum()
    })
}

pub(crate) fn spd_log_det_inverse(u: &SymMatrix) -> Result<(f64, DMatrix<f64>)> {
    let chol = Cholesky::new(u.as_matrix().clone()).ok_or_else(|| Error::NotPsd {
        min_eig: u.eigenvalues().min(),
        tol: 0.0,
    })?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok((log_det, chol.inverse()))
}
