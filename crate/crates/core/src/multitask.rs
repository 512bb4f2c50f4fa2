//! Multitask analysis: the task-task correlation matrix of prediction
//! coefficients, diagonal/off-diagonal decorrelation ratios, and renormalized
//! kernels for per-task masked gatings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatings::GatingFamily;
use crate::gp::KernelBundle;
use crate::numerics::{pinv_solve, KernelFactor};
use crate::renorm::{renorm_kernel_from_gates, OrderParameterSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCorrelation {
    /// `C[p][q]`: summed `|k̃ᵀK̃⁻¹|` from training points of task `q` to
    /// test points of task `p`.
    #[serde(with = "crate::serde_matrix")]
    pub c: DMatrix<f64>,
    pub n_tasks: usize,
    pub train_per_task: Vec<usize>,
    pub test_per_task: Vec<usize>,
}

/// Ratio of mean diagonal to mean off-diagonal amplitude.
///
/// When the off-diagonal mean is zero the ratio is `+∞` and
/// `off_diagonal_zero` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decorrelation {
    pub diagonal: f64,
    pub off_diagonal: f64,
    pub ratio: f64,
    pub off_diagonal_zero: bool,
}

impl Decorrelation {
    fn new(diagonal: f64, off_diagonal: f64) -> Self {
        if off_diagonal == 0.0 {
            Decorrelation {
                diagonal,
                off_diagonal,
                ratio: f64::INFINITY,
                off_diagonal_zero: true,
            }
        } else {
            Decorrelation {
                diagonal,
                off_diagonal,
                ratio: diagonal / off_diagonal,
                off_diagonal_zero: false,
            }
        }
    }
}

fn count_tasks(task_of: &[usize], n_tasks: usize, what: &str) -> Result<Vec<usize>> {
    let mut counts = vec![0; n_tasks];
    for &t in task_of {
        if t >= n_tasks {
            return Err(Error::DimensionMismatch(format!(
                "{what} task index {t} with {n_tasks} tasks"
            )));
        }
        counts[t] += 1;
    }
    Ok(counts)
}

/// Prediction coefficients `k̃(x)ᵀK̃⁻¹` for every test row (P_t×P). A
/// singular kernel falls back to the pseudo-inverse.
pub fn prediction_coefficients(bundle: &KernelBundle) -> Result<DMatrix<f64>> {
    let rhs = bundle.k_test.transpose();
    let solved = match KernelFactor::new(&bundle.k_train).and_then(|f| f.solve(&rhs)) {
        Err(Error::SingularKernel { residual, .. }) => {
            log::warn!(
                "singular training kernel (residual {residual:.3e}); using the pseudo-inverse"
            );
            pinv_solve(&bundle.k_train, &rhs)
        }
        other => other?,
    };
    Ok(solved.transpose())
}

pub fn task_correlation_matrix(
    bundle: &KernelBundle,
    task_train: &[usize],
    task_test: &[usize],
    n_tasks: usize,
) -> Result<TaskCorrelation> {
    if task_train.len() != bundle.k_train.dim() || task_test.len() != bundle.k_test.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} train and {} test task labels for a {}x{} test kernel",
            task_train.len(),
            task_test.len(),
            bundle.k_test.nrows(),
            bundle.k_test.ncols()
        )));
    }
    let train_per_task = count_tasks(task_train, n_tasks, "train")?;
    let test_per_task = count_tasks(task_test, n_tasks, "test")?;
    let coef = prediction_coefficients(bundle)?;
    let mut c = DMatrix::zeros(n_tasks, n_tasks);
    for (g, &p) in task_test.iter().enumerate() {
        for (mu, &q) in task_train.iter().enumerate() {
            c[(p, q)] += coef[(g, mu)].abs();
        }
    }
    Ok(TaskCorrelation {
        c,
        n_tasks,
        train_per_task,
        test_per_task,
    })
}

/// Mean diagonal entry of `C` over mean off-diagonal entry.
pub fn decorrelation_ratio(tc: &TaskCorrelation) -> Result<Decorrelation> {
    let n = tc.n_tasks;
    if n < 2 {
        return Err(Error::DomainError(format!(
            "decorrelation needs at least 2 tasks, got {n}"
        )));
    }
    let diag = (0..n).map(|i| tc.c[(i, i)]).sum::<f64>() / n as f64;
    let off = (tc.c.sum() - diag * n as f64) / (n * (n - 1)) as f64;
    Ok(Decorrelation::new(diag, off))
}

/// Mean `|K|` over same-task blocks against cross-task blocks of a kernel
/// whose rows and columns are labelled by `task_of`.
pub fn block_ratio(k: &DMatrix<f64>, task_of: &[usize]) -> Result<Decorrelation> {
    if k.nrows() != task_of.len() || k.ncols() != task_of.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} kernel with {} task labels",
            k.nrows(),
            k.ncols(),
            task_of.len()
        )));
    }
    let (mut same, mut n_same, mut cross, mut n_cross) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            if task_of[i] == task_of[j] {
                same += k[(i, j)].abs();
                n_same += 1;
            } else {
                cross += k[(i, j)].abs();
                n_cross += 1;
            }
        }
    }
    if n_cross == 0 {
        return Err(Error::DomainError("kernel has a single task".into()));
    }
    Ok(Decorrelation::new(
        same / n_same as f64,
        cross / n_cross as f64,
    ))
}

/// Gating matrix (M×P) where column `μ` is evaluated with the family of
/// task `task_of[μ]`.
pub fn task_gates(
    families: &[GatingFamily],
    x: &DMatrix<f64>,
    task_of: &[usize],
) -> Result<DMatrix<f64>> {
    let first = families
        .first()
        .ok_or_else(|| Error::DomainError("no gating families".into()))?;
    if families.iter().any(|f| f.n_gates != first.n_gates) {
        return Err(Error::DimensionMismatch(
            "task families have different gate counts".into(),
        ));
    }
    if task_of.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} task labels for {} inputs",
            task_of.len(),
            x.nrows()
        )));
    }
    count_tasks(task_of, families.len(), "input")?;
    let mut g = DMatrix::zeros(first.n_gates, x.nrows());
    for (t, family) in families.iter().enumerate() {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&i| task_of[i] == t).collect();
        if rows.is_empty() {
            continue;
        }
        let xs = x.select_rows(&rows);
        let gt = family.evaluate(&xs)?;
        for (k, &i) in rows.iter().enumerate() {
            g.set_column(i, &gt.column(k));
        }
    }
    Ok(g)
}

/// Renormalized kernel with per-task gatings:
/// `K̃_{pμ,qν} = (g^p(x^μ)ᵀ U g^q(x^ν)/M)·σ²x^μ·x^ν/N0`.
pub fn topdown_task_kernel(
    ops: &OrderParameterSet,
    families: &[GatingFamily],
    x_train: &DMatrix<f64>,
    task_train: &[usize],
    x_test: &DMatrix<f64>,
    task_test: &[usize],
) -> Result<KernelBundle> {
    let g_train = task_gates(families, x_train, task_train)?;
    let g_test = task_gates(families, x_test, task_test)?;
    renorm_kernel_from_gates(ops, &g_train, x_train, &g_test, x_test, "masked")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    /// At most `M` distinct tasks can be memorized.
    pub tasks_fit: bool,
    /// `N0·M_p` for every task.
    pub per_task_capacity: Vec<usize>,
    /// `P_p ≤ N0·M_p` for every task.
    pub per_task_fit: Vec<bool>,
    /// Largest `M_p` available to every task when the masks are disjoint.
    pub disjoint_limit: usize,
    pub feasible: bool,
}

/// Memorization check for `n = permitted.len()` tasks sharing `M` gates,
/// task `p` having `permitted[p]` permitted gates and `p_train[p]` examples.
pub fn multitask_capacity_check(
    m: usize,
    permitted: &[usize],
    n0: usize,
    p_train: &[usize],
) -> Result<CapacityReport> {
    if permitted.len() != p_train.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} permitted counts for {} tasks",
            permitted.len(),
            p_train.len()
        )));
    }
    if permitted.iter().any(|&mp| mp > m) {
        return Err(Error::DomainError(format!(
            "a task permits more than M = {m} gates"
        )));
    }
    let n = permitted.len();
    let per_task_capacity = permitted
        .iter()
        .map(|&mp| {
            n0.checked_mul(mp)
                .ok_or_else(|| Error::Overflow("N0·M_p".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_task_fit: Vec<bool> = per_task_capacity
        .iter()
        .zip(p_train)
        .map(|(&c, &p)| p <= c)
        .collect();
    let tasks_fit = n <= m;
    let feasible = tasks_fit && per_task_fit.iter().all(|&b| b);
    Ok(CapacityReport {
        tasks_fit,
        per_task_capacity,
        per_task_fit,
        disjoint_limit: m.checked_div(n).unwrap_or(m),
        feasible,
    })
}

/// Writes `C` as CSV with `task_<q>` column headers and a leading task column.
pub fn write_correlation_csv(
    path: impl AsRef<std::path::Path>,
    tc: &TaskCorrelation,
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..tc.n_tasks).map(|q| format!("task_{q}")).collect();
    writeln!(w, "task,{}", header.join(","))?;
    for p in 0..tc.n_tasks {
        let row: Vec<String> = (0..tc.n_tasks)
            .map(|q| format!("{:e}", tc.c[(p, q)]))
            .collect();
        writeln!(w, "{p},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
