//! Dense symmetric linear algebra and special functions shared by the theory modules.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; symmetric ones travel as [`SymMatrix`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square matrix whose entries satisfy `a[i][j] == a[j][i]` bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after averaging it with its transpose.
    ///
    /// Fails if `m` is not square, empty, or visibly asymmetric (relative
    /// asymmetry above 1e-8).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::DimensionMismatch(format!(
                "matrix is not symmetric (max |a - a^T| = {asym:.3e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its transpose without checking asymmetry.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrized needs a square matrix");
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        SymMatrix(DMatrix::from_diagonal_element(dim, dim, value))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMatrix(&self.0 * factor)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::new(crate::serde_matrix::from_rows(&rows)?)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        crate::serde_matrix::to_rows(&m.0)
    }
}

/// Eigen-decomposition `S = Q diag(λ) Qᵀ` with negative eigenvalues clipped,
/// kept around so that the square root and its derivative share one
/// factorization.
#[derive(Clone, Debug)]
pub struct PsdSqrt {
    vectors: DMatrix<f64>,
    roots: DVector<f64>,
}

impl PsdSqrt {
    /// Decomposes `s`; eigenvalues below `-1e-10·λ_max` are an error.
    pub fn new(s: &SymMatrix) -> Result<Self> {
        let eig = SymmetricEigen::new(s.as_matrix().clone());
        let lambda_max = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0_f64, |a, b| a.max(b.abs()));
        let tol = 1e-10 * lambda_max;
        let min_eig = eig.eigenvalues.min();
        if min_eig < -tol {
            return Err(Error::NotPsd { min_eig, tol });
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(PsdSqrt {
            vectors: eig.eigenvectors,
            roots,
        })
    }

    pub fn sqrt(&self) -> SymMatrix {
        let q = &self.vectors;
        let scaled = q * DMatrix::from_diagonal(&self.roots);
        SymMatrix::symmetrized(scaled * q.transpose())
    }

    /// Pulls a gradient with respect to `S^{1/2}` back to a gradient with
    /// respect to `S`, by solving the Sylvester equation `R dR + dR R = dS`
    /// in the eigenbasis.
    pub fn pullback(&self, grad_sqrt: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.vectors;
        let sym = 0.5 * (grad_sqrt + grad_sqrt.transpose());
        let mut inner = q.transpose() * sym * q;
        let n = self.roots.len();
        for i in 0..n {
            for j in 0..n {
                let denom = self.roots[i] + self.roots[j];
                inner[(i, j)] = if denom > 0.0 {
                    inner[(i, j)] / denom
                } else {
                    0.0
                };
            }
        }
        q * inner * q.transpose()
    }
}

/// Symmetric PSD square root; `‖R·R − S‖_F ≤ 1e-8‖S‖_F`.
pub fn psd_sqrt(s: &SymMatrix) -> Result<SymMatrix> {
    Ok(PsdSqrt::new(s)?.sqrt())
}

/// Projects onto the PSD cone by clipping eigenvalues at `floor·λ_max`.
pub fn psd_project(s: &SymMatrix, floor: f64) -> SymMatrix {
    let eig = SymmetricEigen::new(s.as_matrix().clone());
    let lambda_max = eig.eigenvalues.max().max(0.0);
    let clip = floor * lambda_max;
    let vals = eig.eigenvalues.map(|l| l.max(clip));
    let q = &eig.eigenvectors;
    SymMatrix::symmetrized(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Number of eigenvalues above `dim·ε·λ_max`.
pub fn numerical_rank(s: &SymMatrix) -> usize {
    let eig = s.eigenvalues();
    let lambda_max = eig.iter().cloned().fold(0.0_f64, f64::max);
    if lambda_max <= 0.0 {
        return 0;
    }
    let cutoff = s.dim() as f64 * f64::EPSILON * lambda_max;
    eig.iter().filter(|&&l| l > cutoff).count()
}

const SOLVE_RESIDUAL_TOL: f64 = 1e-10;
const JITTER_START: f64 = 1e-10;
const JITTER_CEILING: f64 = 1e-4;
const MAX_REFINEMENTS: usize = 30;

/// Cholesky factorization of a kernel matrix with jitter escalation.
///
/// The jitter only conditions the factorization: every solve is refined
/// against the unjittered matrix and must reach a relative residual of
/// 1e-10, otherwise the kernel is reported singular.
pub struct KernelFactor<'a> {
    kernel: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

fn jitter_levels(k: &DMatrix<f64>) -> impl Iterator<Item = f64> {
    let mean_diag = (k.trace() / k.nrows() as f64).abs().max(f64::MIN_POSITIVE);
    let mut levels = vec![0.0];
    let mut rel = JITTER_START;
    while rel <= JITTER_CEILING * (1.0 + 1e-9) {
        levels.push(rel * mean_diag);
        rel *= 10.0;
    }
    levels.into_iter()
}

fn max_jitter(k: &DMatrix<f64>) -> f64 {
    JITTER_CEILING * (k.trace() / k.nrows() as f64).abs()
}

impl<'a> KernelFactor<'a> {
    /// Factors `k`, escalating the jitter until the Cholesky factorization succeeds.
    pub fn new(k: &'a SymMatrix) -> Result<Self> {
        Self::from_matrix(k.as_matrix())
    }

    pub(crate) fn from_matrix(kernel: &'a DMatrix<f64>) -> Result<Self> {
        for jitter in jitter_levels(kernel) {
            if let Some(f) = Self::at_jitter(kernel, jitter) {
                return Ok(f);
            }
        }
        Err(Error::SingularKernel {
            residual: f64::INFINITY,
            max_jitter: max_jitter(kernel),
        })
    }

    fn at_jitter(kernel: &'a DMatrix<f64>, jitter: f64) -> Option<Self> {
        let mut shifted = kernel.clone();
        if jitter > 0.0 {
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += jitter;
            }
        }
        Cholesky::new(shifted).map(|chol| KernelFactor {
            kernel,
            chol,
            jitter,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `log det` of the (jittered) kernel.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `K X = B` with iterative refinement.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_with_residual(b).map(|(x, _)| x)
    }

    fn solve_with_residual(&self, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let b_norm = b.norm();
        if b_norm == 0.0 {
            return Ok((DMatrix::zeros(b.nrows(), b.ncols()), 0.0));
        }
        let mut x = self.chol.solve(b);
        let mut prev = f64::INFINITY;
        for _ in 0..MAX_REFINEMENTS {
            let r = b - self.kernel * &x;
            let rel = r.norm() / b_norm;
            if rel <= SOLVE_RESIDUAL_TOL {
                return Ok((x, rel));
            }
            if !rel.is_finite() || rel > 0.5 * prev {
                return Err(Error::SingularKernel {
                    residual: rel,
                    max_jitter: self.jitter,
                });
            }
            prev = rel;
            x += self.chol.solve(&r);
        }
        Err(Error::SingularKernel {
            residual: prev,
            max_jitter: self.jitter,
        })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(x.column(0).into_owned())
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let n = self.kernel.nrows();
        let inv = self.solve(&DMatrix::identity(n, n))?;
        Ok(0.5 * (&inv + inv.transpose()))
    }
}

/// Result of [`chol_solve`], with the jitter that was applied to the factorization.
#[derive(Clone, Debug)]
pub struct CholSolution {
    pub x: DMatrix<f64>,
    pub jitter: f64,
    pub residual: f64,
}

/// Solves `K X = B` for symmetric positive definite `K`.
///
/// Jitter `λI` starts at `1e-10·tr(K)/dim` and grows ×10 up to
/// `1e-4·tr(K)/dim`; if no level yields a residual ≤ 1e-10 the kernel is
/// singular.
pub fn chol_solve(k: &SymMatrix, b: &DMatrix<f64>) -> Result<CholSolution> {
    if b.nrows() != k.dim() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has {} rows, kernel is {}x{}",
            b.nrows(),
            k.dim(),
            k.dim()
        )));
    }
    let kernel = k.as_matrix();
    let mut last_residual = f64::INFINITY;
    for jitter in jitter_levels(kernel) {
        let Some(f) = KernelFactor::at_jitter(kernel, jitter) else {
            continue;
        };
        match f.solve_with_residual(b) {
            Ok((x, residual)) => {
                if jitter > 0.0 {
                    log::debug!("chol_solve: applied jitter {jitter:.3e}");
                }
                return Ok(CholSolution {
                    x,
                    jitter,
                    residual,
                });
            }
            Err(Error::SingularKernel { residual, .. }) => last_residual = residual,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularKernel {
        residual: last_residual,
        max_jitter: max_jitter(kernel),
    })
}

/// Pseudo-inverse solve through the eigendecomposition, discarding
/// eigenvalues at or below the [`numerical_rank`] cutoff. Used past the
/// interpolation threshold where `K` is genuinely rank deficient.
pub fn pinv_solve(k: &SymMatrix, b: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(k.as_matrix().clone());
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = k.dim() as f64 * f64::EPSILON * lambda_max;
    let inv = eig
        .eigenvalues
        .map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&inv) * (q.transpose() * b)
}

/// Complementary error function, Chebyshev fit with fractional error below 1.2e-7.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let ans = t * poly.exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF through [`erfc`].
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 2000,
            grad_tol: 1e-10,
            history: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Limited-memory BFGS with Armijo backtracking. Objective evaluations that
/// fail (e.g. a trial point leaves the PSD cone) are treated as `+∞` and
/// the step is shortened.
pub fn lbfgs<F>(mut objective: F, x0: DVector<f64>, cfg: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut x = x0;
    let (mut fx, mut g) = objective(&x)?;
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol {
            return Ok(Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: true,
            });
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / y.dot(s);
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push((rho, a));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => s.dot(y) / y.dot(y),
            _ => 1.0 / gnorm.max(1.0),
        };
        let mut dir = q * gamma;
        for ((s, y), (rho, a)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&dir);
            dir.axpy(a - b, s, 1.0);
        }
        dir = -dir;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = -g.clone() / gnorm.max(1.0);
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Ok((ft, gt)) = objective(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no descent possible at working precision
            return Ok(Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: false,
            });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        if s.dot(&y) > 1e-14 * s.norm() * y.norm() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > cfg.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let grad_norm = g.norm();
    Ok(Minimum {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: grad_norm <= cfg.grad_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let r = psd_sqrt(&SymMatrix::identity(3)).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).norm() < 1e-14);
        let r = psd_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-14 && (r[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let s = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&s), Err(Error::NotPsd { .. })));
        // marginal negative eigenvalue within tolerance is clipped
        let s = SymMatrix::from_diagonal(&[1.0, -1e-12]);
        let r = psd_sqrt(&s).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn sqrt_pullback_matches_finite_differences() {
        let b = random_matrix(4, 4, 3);
        let s = SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(4, 4));
        let w = random_matrix(4, 4, 4);
        // scalar objective φ(S) = <W, S^{1/2}>
        let phi =
            |s: &SymMatrix| -> f64 { psd_sqrt(s).unwrap().as_matrix().component_mul(&w).sum() };
        let grad = PsdSqrt::new(&s).unwrap().pullback(&w);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..=i {
                let mut e = DMatrix::zeros(4, 4);
                e[(i, j)] += h;
                if i != j {
                    e[(j, i)] += h;
                }
                let plus = SymMatrix::symmetrized(s.as_matrix() + &e);
                let minus = SymMatrix::symmetrized(s.as_matrix() - &e);
                let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
                let analytic = if i == j {
                    grad[(i, i)]
                } else {
                    grad[(i, j)] + grad[(j, i)]
                };
                assert!(
                    (fd - analytic).abs() < 1e-6,
                    "({i},{j}) fd {fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn chol_solve_two_by_two() {
        let k = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sol = chol_solve(&k, &b).unwrap();
        assert!((sol.x[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sol.x[1] + 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(sol.jitter, 0.0);
    }

    #[test]
    fn chol_solve_identity() {
        let b = random_matrix(5, 2, 9);
        let sol = chol_solve(&SymMatrix::identity(5), &b).unwrap();
        assert!((sol.x - b).norm() < 1e-14);
    }

    #[test]
    fn chol_solve_flags_rank_deficiency() {
        // rank 3 Gram matrix on 6 points
        let f = random_matrix(6, 3, 11);
        let k = SymMatrix::symmetrized(&f * f.transpose());
        let b = random_matrix(6, 1, 12);
        assert!(matches!(
            chol_solve(&k, &b),
            Err(Error::SingularKernel { .. })
        ));
    }

    #[test]
    fn chol_solve_jitters_marginally_indefinite_kernel() {
        let f = random_matrix(6, 3, 13);
        let mut k = &f * f.transpose();
        // push the zero eigenvalues slightly negative
        k -= DMatrix::identity(6, 6) * 1e-13;
        let k = SymMatrix::symmetrized(k);
        let factor = KernelFactor::new(&k).unwrap();
        assert!(factor.jitter() > 0.0);
    }

    #[test]
    fn rank_counts() {
        assert_eq!(numerical_rank(&SymMatrix::identity(5)), 5);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(
            numerical_rank(&SymMatrix::symmetrized(&v * v.transpose())),
            1
        );
    }

    #[test]
    fn pinv_matches_inverse_on_full_rank() {
        let b = random_matrix(5, 5, 21);
        let k = SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(5, 5));
        let rhs = random_matrix(5, 2, 22);
        let x1 = pinv_solve(&k, &rhs);
        let x2 = chol_solve(&k, &rhs).unwrap().x;
        assert!((x1 - x2).norm() < 1e-10);
    }

    #[test]
    fn erfc_reference_points() {
        assert!((erfc(0.0) - 1.0).abs() < 1.2e-7);
        assert!(erfc(6.0) < 1e-16);
        assert!((erfc(0.707_106_78) - 0.317_310_51).abs() < 1.2e-7);
        assert!((normal_cdf(1.0) - 0.841_344_746).abs() < 2e-7);
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Ok((v, g))
        };
        let m = lbfgs(
            f,
            DVector::from_vec(vec![-1.2, 1.0]),
            &LbfgsConfig::default(),
        )
        .unwrap();
        assert!(
            (m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            m.x
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn sqrt_squares_back(dim in 1usize..48, rank in 1usize..48, seed in any::<u64>()) {
                let b = random_matrix(dim, rank.min(dim), seed);
                let s = SymMatrix::symmetrized(&b * b.transpose());
                let r = psd_sqrt(&s).unwrap();
                let back = r.as_matrix() * r.as_matrix();
                prop_assert!((back - s.as_matrix()).norm() <= 1e-8 * s.frobenius_norm());
            }

            #[test]
            fn chol_recovers_solution(dim in 1usize..40, seed in any::<u64>()) {
                let b = random_matrix(dim, dim, seed);
                let k = SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(dim, dim) * dim as f64);
                let x = random_matrix(dim, 3, seed ^ 0xabcdef);
                let rhs = k.as_matrix() * &x;
                let sol = chol_solve(&k, &rhs).unwrap();
                prop_assert!((sol.x - &x).norm() <= 1e-9 * x.norm());
            }

            #[test]
            fn erfc_reflection_and_bounds(x in -5.5f64..20.0) {
                // below -5.5, 2 - erfc(x) is under half an ulp of 2
                let v = erfc(x);
                prop_assert!(v > 0.0 && v < 2.0);
                prop_assert!((erfc(-x) - (2.0 - v)).abs() <= 1.2e-7);
            }
        }
    }
}
