//! Infinite-width kernels: the input kernel `K0(x,y) = σ²xᵀy/N0`, the GP
//! kernel `(σ²g(x)ᵀg(y)/M)^L K0(x,y)`, and normalized kernels.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatings::{random_halfspace_family, GatingFamily};
use crate::numerics::SymMatrix;
use crate::predictor::{kernel_predict, PredictorStats};
use crate::rng::{child_rng, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gp,
    Renormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub sigma: f64,
    pub depth: usize,
    pub n_gates: usize,
    pub gating: String,
}

/// Train/train, test/train and test-diagonal kernel blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBundle {
    pub k_train: SymMatrix,
    pub k_test: DMatrix<f64>,
    pub k_diag_test: DVector<f64>,
    pub kind: KernelKind,
    pub meta: KernelMeta,
}

impl KernelBundle {
    pub fn predict(&self, y: &DVector<f64>) -> Result<PredictorStats> {
        kernel_predict(&self.k_train, &self.k_test, &self.k_diag_test, y, 0.0)
    }

    /// Writes `<name>_train.csv`, `<name>_test.csv`, `<name>_diag.csv` and a
    /// `<name>.json` metadata sidecar into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, name: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(
            dir.join(format!("{name}_train.csv")),
            self.k_train.as_matrix(),
        )?;
        write_matrix_csv(dir.join(format!("{name}_test.csv")), &self.k_test)?;
        let diag =
            DMatrix::from_column_slice(self.k_diag_test.len(), 1, self.k_diag_test.as_slice());
        write_matrix_csv(dir.join(format!("{name}_diag.csv")), &diag)?;
        let sidecar = serde_json::json!({
            "kind": self.kind,
            "meta": self.meta,
            "n_train": self.k_train.dim(),
            "n_test": self.k_test.nrows(),
        });
        std::fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }
}

/// Dense CSV without header, values in shortest round-trip form.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `σ² X X'ᵀ/N0`.
pub fn input_kernel(x: &DMatrix<f64>, x2: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != x2.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "input dims {} and {}",
            x.ncols(),
            x2.ncols()
        )));
    }
    Ok(x * x2.transpose() * (sigma * sigma / x.ncols() as f64))
}

/// GP kernel block between two point sets given their gating matrices.
pub fn gp_block(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    sigma: f64,
    depth: usize,
) -> Result<DMatrix<f64>> {
    if g.nrows() != g2.nrows() {
        return Err(Error::DimensionMismatch(
            "gating matrices with different M".into(),
        ));
    }
    let k0 = input_kernel(x, x2, sigma)?;
    let m = g.nrows() as f64;
    let gram = g.transpose() * g2 * (sigma * sigma / m);
    Ok(gram.map(|v| v.powi(depth as i32)).component_mul(&k0))
}

/// Per-point diagonal `K(x,x)` of the GP kernel.
pub fn gp_diag(g: &DMatrix<f64>, x: &DMatrix<f64>, sigma: f64, depth: usize) -> DVector<f64> {
    let m = g.nrows() as f64;
    let n0 = x.ncols() as f64;
    DVector::from_fn(x.nrows(), |i, _| {
        let gg = g.column(i).norm_squared() * sigma * sigma / m;
        gg.powi(depth as i32) * x.row(i).norm_squared() * sigma * sigma / n0
    })
}

pub fn gp_kernel(
    family: &GatingFamily,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    sigma: f64,
    depth: usize,
) -> Result<KernelBundle> {
    if depth == 0 {
        return Err(Error::DomainError(
            "GP kernel depth must be at least 1".into(),
        ));
    }
    let g = family.evaluate(x_train)?;
    let gt = family.evaluate(x_test)?;
    let k_train = SymMatrix::symmetrized(gp_block(&g, x_train, &g, x_train, sigma, depth)?);
    Ok(KernelBundle {
        k_train,
        k_test: gp_block(&gt, x_test, &g, x_train, sigma, depth)?,
        k_diag_test: gp_diag(&gt, x_test, sigma, depth),
        kind: KernelKind::Gp,
        meta: KernelMeta {
            sigma,
            depth,
            n_gates: family.n_gates,
            gating: family.kind_name().into(),
        },
    })
}

pub fn gp_predict(bundle: &KernelBundle, y: &DVector<f64>) -> Result<PredictorStats> {
    bundle.predict(y)
}

/// `((π − θ)/π)^L cos θ`, the normalized GP kernel of zero-threshold random
/// halfspace gatings as `M → ∞`.
pub fn analytic_normalized_kernel(theta: f64, depth: usize) -> Result<f64> {
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(Error::DomainError(format!("angle {theta} outside [0, pi]")));
    }
    let pi = std::f64::consts::PI;
    Ok(((pi - theta) / pi).powi(depth as i32) * theta.cos())
}

/// `K(x,y)/√(K(x,x)K(y,y))`.
pub fn normalized_kernel<F>(kernel: F, x: &[f64], y: &[f64]) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let kxx = kernel(x, x);
    let kyy = kernel(y, y);
    if !(kxx > 0.0 && kyy > 0.0) {
        return Err(Error::ZeroDiagonal);
    }
    Ok((kernel(x, y) / (kxx * kyy).sqrt()).clamp(-1.0, 1.0))
}

/// Entrywise normalization of a kernel matrix by its diagonal.
pub fn normalize_matrix(k: &SymMatrix) -> Result<DMatrix<f64>> {
    let d: Vec<f64> = (0..k.dim()).map(|i| k[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ZeroDiagonal);
    }
    Ok(DMatrix::from_fn(k.dim(), k.dim(), |i, j| {
        (k[(i, j)] / (d[i] * d[j]).sqrt()).clamp(-1.0, 1.0)
    }))
}

/// Uniform grid of `n` angles strictly inside `(0, π)`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    (1..=n).map(|i| pi * i as f64 / (n + 1) as f64).collect()
}

/// Monte Carlo normalized kernel `cos(g(x(0)), g(x(θ)))^L cos(x(0), x(θ))`
/// of `M` zero-threshold halfspace gates, with inputs
/// `x(θ) = [cos θ, sin θ, η]`, `η ~ N(0, σ0² I_{N0−2})`.
///
/// Returns one row per depth `0..=max_depth`, averaged over `draws`
/// independent gate and noise realizations.
pub fn flattening_monte_carlo(
    thetas: &[f64],
    max_depth: usize,
    n_gates: usize,
    n0: usize,
    sigma0: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n0 < 2 || draws == 0 {
        return Err(Error::DomainError(
            "need N0 >= 2 and at least one draw".into(),
        ));
    }
    let noise = Normal::new(0.0, sigma0).map_err(|e| Error::DomainError(e.to_string()))?;
    let mut acc = vec![vec![0.0; thetas.len()]; max_depth + 1];
    for r in 0..draws {
        let fam = random_halfspace_family(n0, n_gates, 0.0, derive_seed(seed, 2 * r as u64))?;
        let mut rng = child_rng(seed, 2 * r as u64 + 1);
        let mut point = |theta: f64| -> Vec<f64> {
            let mut v = vec![theta.cos(), theta.sin()];
            v.extend((2..n0).map(|_| noise.sample(&mut rng)));
            v
        };
        let x0 = point(0.0);
        let g0 = fam.evaluate_one(&x0)?;
        for (t, &theta) in thetas.iter().enumerate() {
            let xt = point(theta);
            let gt = fam.evaluate_one(&xt)?;
            let cg = cosine(&g0, &gt);
            let cx = cosine(&x0, &xt);
            for (l, row) in acc.iter_mut().enumerate() {
                row[t] += cg.powi(l as i32) * cx / draws as f64;
            }
        }
    }
    Ok(acc)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gatings::random_halfspace_family;
    use crate::network::{init_params, Architecture};
    use crate::rng::rng_from_seed;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn input_kernel_cases() {
        let n0 = 9;
        let e1 = DMatrix::from_fn(1, n0, |_, j| if j == 0 { 3.0 } else { 0.0 });
        assert!((input_kernel(&e1, &e1, 1.0).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        let e2 = DMatrix::from_fn(1, n0, |_, j| if j == 1 { 1.0 } else { 0.0 });
        assert_eq!(input_kernel(&e1, &e2, 1.0).unwrap()[(0, 0)], 0.0);
        let x = gaussian(3, n0, 1);
        let k1 = input_kernel(&x, &x, 1.0).unwrap();
        let k2 = input_kernel(&x, &x, 2.0).unwrap();
        assert!((k2 - k1 * 4.0).norm() < 1e-12);
        assert!(input_kernel(&x, &gaussian(2, 4, 2), 1.0).is_err());
    }

    #[test]
    fn single_always_on_gate_is_scaled_input_kernel() {
        let x = gaussian(5, 4, 3);
        let fam = random_halfspace_family(4, 1, -1e9, 4).unwrap();
        for depth in 1..4 {
            let b = gp_kernel(&fam, &x, &x, 1.3, depth).unwrap();
            let k0 = input_kernel(&x, &x, 1.3).unwrap();
            let expect = k0 * 1.3_f64.powi(2 * depth as i32);
            assert!((b.k_train.as_matrix() - &expect).norm() < 1e-12 * expect.norm());
        }
    }

    #[test]
    fn finite_width_average_matches_gp_kernel() {
        // L = 1 readout-layer kernel σ²/(NM) Σ_m g_m g'_m Σ_i x1_i x1'_i over W ~ N(0, σ²)
        let x = gaussian(2, 5, 5);
        let fam = random_halfspace_family(5, 4, 0.0, 6).unwrap();
        let g = fam.evaluate(&x).unwrap();
        let sigma = 0.9;
        let gp = gp_block(&g, &x, &g, &x, sigma, 1).unwrap();
        let gate_term = g.column(0).dot(&g.column(1)) * sigma * sigma / 4.0;
        let arch = Architecture::new(1, 4000, 4, 5, sigma).unwrap();
        let samples: Vec<f64> = (0..40)
            .map(|r| {
                let p = init_params(&arch, 1000 + r);
                let x1 = &x * p.w1.transpose() / 5.0_f64.sqrt();
                gate_term * x1.row(0).dot(&x1.row(1)) / 4000.0
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - gp[(0, 1)]).abs() < 3.0 * se,
            "{mean} vs {} (se {se})",
            gp[(0, 1)]
        );
    }

    #[test]
    fn zero_input_overlap_zeroes_kernel() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let fam = random_halfspace_family(2, 6, -1e9, 7).unwrap();
        let b = gp_kernel(&fam, &x, &x, 1.0, 2).unwrap();
        assert_eq!(b.k_train[(0, 1)], 0.0);
    }

    #[test]
    fn interpolates_training_point() {
        let x = gaussian(1, 3, 8);
        let fam = random_halfspace_family(3, 5, -1e9, 9).unwrap();
        let b = gp_kernel(&fam, &x, &x, 1.0, 1).unwrap();
        let s = gp_predict(&b, &DVector::from_element(1, 0.7)).unwrap();
        assert!((s.mean[0] - 0.7).abs() < 1e-12);
        assert!(s.variance[0].abs() < 1e-12);
    }

    #[test]
    fn analytic_normalized_values() {
        let pi = std::f64::consts::PI;
        for l in 0..6 {
            assert_eq!(analytic_normalized_kernel(0.0, l).unwrap(), 1.0);
            assert!(analytic_normalized_kernel(pi / 2.0, l).unwrap().abs() < 1e-16);
        }
        let v = analytic_normalized_kernel(pi / 4.0, 2).unwrap();
        assert!((v - 0.5625 * std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v - 0.39775).abs() < 1e-5);
        assert!(matches!(
            analytic_normalized_kernel(-0.1, 1),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            analytic_normalized_kernel(3.2, 1),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn flattening_is_monotone_in_depth() {
        for &theta in &theta_grid(64) {
            let vals: Vec<f64> = (0..12)
                .map(|l| analytic_normalized_kernel(theta, l).unwrap().abs())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn normalized_kernel_properties() {
        let k = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let x = [1.0, 2.0, -0.5];
        let y = [0.3, -1.0, 2.0];
        assert!((normalized_kernel(k, &x, &x).unwrap() - 1.0).abs() < 1e-15);
        let a = normalized_kernel(k, &x, &y).unwrap();
        let b = normalized_kernel(|p: &[f64], q: &[f64]| 7.5 * k(p, q), &x, &y).unwrap();
        assert!((a - b).abs() < 1e-15 && a.abs() <= 1.0);
        assert!(matches!(
            normalized_kernel(k, &[0.0, 0.0, 0.0], &y),
            Err(Error::ZeroDiagonal)
        ));
    }

    #[test]
    fn monte_carlo_tracks_closed_form_for_many_gates() {
        let grid = theta_grid(16);
        let mc = flattening_monte_carlo(&grid, 2, 500, 20, 0.005, 8, 11).unwrap();
        for l in 0..=2 {
            for (t, &theta) in grid.iter().enumerate() {
                let exact = analytic_normalized_kernel(theta, l).unwrap();
                assert!(
                    (mc[l][t] - exact).abs() < 0.05,
                    "L {l} θ {theta}: {} vs {exact}",
                    mc[l][t]
                );
            }
        }
    }

    #[test]
    fn bundle_export_writes_files() {
        let x = gaussian(3, 2, 12);
        let fam = random_halfspace_family(2, 3, 0.0, 13).unwrap();
        let b = gp_kernel(&fam, &x, &x, 1.0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.export(dir.path(), "gp").unwrap();
        let train = std::fs::read_to_string(dir.path().join("gp_train.csv")).unwrap();
        assert_eq!(train.lines().count(), 3);
        assert!(dir.path().join("gp.json").exists());
    }
}
