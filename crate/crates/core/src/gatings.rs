//! Fixed gating families `g_m(x)`: random halfspaces, localized receptive
//! fields, soft k-means responsibilities and per-task top-down masks.
//!
//! Inputs are row-major `P×N0` matrices; [`GatingFamily::evaluate`] returns
//! the `M×P` gating matrix whose column `μ` is `g(x^μ)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatingKind {
    /// `Θ(Vx/√N0 − b)`, rows of `projections` are the `V_m`.
    RandomHalfspace {
        #[serde(with = "crate::serde_matrix")]
        projections: DMatrix<f64>,
        threshold: f64,
    },
    /// Halfspace gates with zero threshold whose projections vanish outside
    /// one contiguous input block.
    Localized {
        #[serde(with = "crate::serde_matrix")]
        projections: DMatrix<f64>,
        m_blocks: usize,
    },
    SoftKmeans {
        #[serde(with = "crate::serde_matrix")]
        centers: DMatrix<f64>,
        tau: f64,
        iters: usize,
    },
    Masked {
        base: Box<GatingKind>,
        mask: Vec<u8>,
        task: usize,
        permit_prob: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingFamily {
    pub n_gates: usize,
    pub input_dim: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: GatingKind,
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    // filled row by row so the draw order does not depend on storage order
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::DimensionMismatch(format!("{name} must be positive")));
    }
    Ok(())
}

/// `g_m(x) = Θ(V_mᵀx/√N0 − b)` with `V_m` i.i.d. standard normal.
pub fn random_halfspace_family(n0: usize, m: usize, b: f64, seed: u64) -> Result<GatingFamily> {
    check_positive("N0", n0)?;
    check_positive("M", m)?;
    Ok(GatingFamily {
        n_gates: m,
        input_dim: n0,
        seed,
        kind: GatingKind::RandomHalfspace {
            projections: gaussian_matrix(m, n0, seed),
            threshold: b,
        },
    })
}

/// `M/m_blocks` zero-threshold halfspace gates per contiguous block of
/// `N0/m_blocks` input coordinates.
pub fn localized_family(n0: usize, m: usize, m_blocks: usize, seed: u64) -> Result<GatingFamily> {
    check_positive("N0", n0)?;
    check_positive("M", m)?;
    check_positive("m_blocks", m_blocks)?;
    if n0 % m_blocks != 0 || m % m_blocks != 0 {
        return Err(Error::DimensionMismatch(format!(
            "m_blocks = {m_blocks} must divide N0 = {n0} and M = {m}"
        )));
    }
    let block = n0 / m_blocks;
    let per_block = m / m_blocks;
    let mut projections = gaussian_matrix(m, n0, seed);
    for gate in 0..m {
        let k = gate / per_block;
        for j in 0..n0 {
            if j / block != k {
                projections[(gate, j)] = 0.0;
            }
        }
    }
    Ok(GatingFamily {
        n_gates: m,
        input_dim: n0,
        seed,
        kind: GatingKind::Localized {
            projections,
            m_blocks,
        },
    })
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(c.row(k).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn nearest(x: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centers.nrows() {
        let d = sq_dist(x, i, centers, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_rows(x: &DMatrix<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = (0..x.nrows())
        .map(|i| x.row(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

/// Fits `M` centers by farthest-point seeding and `iters` Lloyd updates;
/// gates are the softmax responsibilities `softmax(−‖x − c_m‖²/(2τ²))` with
/// `τ` the mean nearest-center distance of the fitted data.
pub fn soft_kmeans_family(
    x: &DMatrix<f64>,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<GatingFamily> {
    check_positive("M", m)?;
    let (p, n0) = x.shape();
    let distinct = distinct_rows(x);
    if distinct < m {
        return Err(Error::DegenerateClusters(format!(
            "{distinct} distinct rows for {m} clusters"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut centers = DMatrix::zeros(m, n0);
    centers.row_mut(0).copy_from(&x.row(rng.random_range(0..p)));
    let mut min_d: Vec<f64> = (0..p).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for k in 1..m {
        let far = argmax(&min_d);
        centers.row_mut(k).copy_from(&x.row(far));
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, k));
        }
    }

    for _ in 0..iters {
        let assign: Vec<(usize, f64)> = (0..p).map(|i| nearest(x, i, &centers)).collect();
        let mut sums = DMatrix::zeros(m, n0);
        let mut counts = vec![0usize; m];
        for (i, &(k, _)) in assign.iter().enumerate() {
            counts[k] += 1;
            let mut row = sums.row_mut(k);
            row += x.row(i);
        }
        let mut dist: Vec<f64> = assign.iter().map(|&(_, d)| d).collect();
        for k in 0..m {
            if counts[k] > 0 {
                let mean = sums.row(k) / counts[k] as f64;
                centers.row_mut(k).copy_from(&mean);
                continue;
            }
            // empty cluster: move it onto the worst-served point
            let far = argmax(&dist);
            if dist[far] == 0.0 {
                return Err(Error::DegenerateClusters(format!(
                    "cluster {k} captured no points"
                )));
            }
            centers.row_mut(k).copy_from(&x.row(far));
            dist[far] = 0.0;
        }
    }

    let tau = (0..p)
        .map(|i| nearest(x, i, &centers).1.sqrt())
        .sum::<f64>()
        / p as f64;
    if !(tau > 0.0) {
        return Err(Error::DegenerateClusters(
            "zero mean nearest-center distance".into(),
        ));
    }
    Ok(GatingFamily {
        n_gates: m,
        input_dim: n0,
        seed,
        kind: GatingKind::SoftKmeans {
            centers,
            tau,
            iters,
        },
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in v.iter().enumerate() {
        if d > v[best] {
            best = i;
        }
    }
    best
}

/// One independently masked copy of `base` per task.
pub fn masked_family(
    base: &GatingFamily,
    permit_prob: f64,
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<GatingFamily>> {
    if !(permit_prob > 0.0 && permit_prob <= 1.0) {
        return Err(Error::DomainError(format!(
            "permit_prob = {permit_prob} outside (0, 1]"
        )));
    }
    let base_kind = match &base.kind {
        GatingKind::Masked { .. } => {
            return Err(Error::Config(
                "masked families cannot be masked again".into(),
            ));
        }
        k => k.clone(),
    };
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n_tasks);
    for task in 0..n_tasks {
        let mut draw = || -> Vec<u8> {
            (0..base.n_gates)
                .map(|_| u8::from(rng.random::<f64>() < permit_prob))
                .collect()
        };
        let mut mask = draw();
        if mask.iter().all(|&b| b == 0) {
            mask = draw();
            if mask.iter().all(|&b| b == 0) {
                return Err(Error::EmptyMask { task });
            }
        }
        out.push(GatingFamily {
            n_gates: base.n_gates,
            input_dim: base.input_dim,
            seed,
            kind: GatingKind::Masked {
                base: Box::new(base_kind.clone()),
                mask,
                task,
                permit_prob,
            },
        });
    }
    Ok(out)
}

impl GatingFamily {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            GatingKind::RandomHalfspace { .. } => "random_halfspace",
            GatingKind::Localized { .. } => "localized",
            GatingKind::SoftKmeans { .. } => "soft_kmeans",
            GatingKind::Masked { .. } => "masked",
        }
    }

    /// Per-gate permission mask; all ones for unmasked families.
    pub fn mask(&self) -> Vec<u8> {
        match &self.kind {
            GatingKind::Masked { mask, .. } => mask.clone(),
            _ => vec![1; self.n_gates],
        }
    }

    /// Number of permitted gates `M_p`.
    pub fn permitted(&self) -> usize {
        self.mask().iter().map(|&b| b as usize).sum()
    }

    /// Gating matrix `M×P` for the rows of `x`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "gating family expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(eval_kind(&self.kind, x, self.input_dim))
    }

    /// Gate activations for a single input.
    pub fn evaluate_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.evaluate(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok(g.column(0).iter().copied().collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn halfspace(
    projections: &DMatrix<f64>,
    threshold: f64,
    x: &DMatrix<f64>,
    n0: usize,
) -> DMatrix<f64> {
    let scale = 1.0 / (n0 as f64).sqrt();
    let pre = projections * x.transpose();
    pre.map(|v| if v * scale > threshold { 1.0 } else { 0.0 })
}

fn eval_kind(kind: &GatingKind, x: &DMatrix<f64>, n0: usize) -> DMatrix<f64> {
    match kind {
        GatingKind::RandomHalfspace {
            projections,
            threshold,
        } => halfspace(projections, *threshold, x, n0),
        GatingKind::Localized { projections, .. } => halfspace(projections, 0.0, x, n0),
        GatingKind::SoftKmeans { centers, tau, .. } => {
            let m = centers.nrows();
            let p = x.nrows();
            let mut out = DMatrix::zeros(m, p);
            let inv = 1.0 / (2.0 * tau * tau);
            for mu in 0..p {
                let logits: Vec<f64> = (0..m).map(|k| -sq_dist(x, mu, centers, k) * inv).collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = w.iter().sum();
                for k in 0..m {
                    out[(k, mu)] = w[k] / z;
                }
            }
            out
        }
        GatingKind::Masked { base, mask, .. } => {
            let mut g = eval_kind(base, x, n0);
            for (k, &keep) in mask.iter().enumerate() {
                if keep == 0 {
                    g.row_mut(k).fill(0.0);
                }
            }
            g
        }
    }
}
