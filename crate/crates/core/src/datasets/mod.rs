//! Teacher-generated regression data, binary classification data built
//! from raw images, and the two multitask constructions (input permutations
//! and conflicting labels).

mod idx;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use idx::{
    encode_images, encode_labels, load_idx, parse_images, parse_labels, synthetic_digits,
    write_idx, RawImages, IMAGES_MAGIC, LABELS_MAGIC,
};

use crate::error::{Error, Result};
use crate::rng::{child_rng, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: BTreeMap<String, Value>,
    pub seed: u64,
}

impl Provenance {
    pub fn new(generator: &str, seed: u64) -> Self {
        Provenance {
            generator: generator.into(),
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

/// Train/test inputs (rows are examples) with labels and task indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub task_train: Vec<usize>,
    pub task_test: Vec<usize>,
    pub n_tasks: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.x_test.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_train.ncols() == self.x_test.ncols()
            && self.y_train.len() == self.x_train.nrows()
            && self.y_test.len() == self.x_test.nrows()
            && self.task_train.len() == self.x_train.nrows()
            && self.task_test.len() == self.x_test.nrows();
        if !ok {
            return Err(Error::DimensionMismatch(
                "inconsistent dataset shapes".into(),
            ));
        }
        if self
            .task_train
            .iter()
            .chain(&self.task_test)
            .any(|&t| t >= self.n_tasks)
        {
            return Err(Error::DimensionMismatch("task index out of range".into()));
        }
        Ok(())
    }

    /// Training rows belonging to `task`.
    pub fn train_indices(&self, task: usize) -> Vec<usize> {
        (0..self.n_train())
            .filter(|&i| self.task_train[i] == task)
            .collect()
    }

    pub fn test_indices(&self, task: usize) -> Vec<usize> {
        (0..self.n_test())
            .filter(|&i| self.task_test[i] == task)
            .collect()
    }

    /// Writes `train.csv`, `test.csv` (features, label, task per row) and
    /// `provenance.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_split(
            &dir.join("train.csv"),
            &self.x_train,
            &self.y_train,
            &self.task_train,
        )?;
        write_split(
            &dir.join("test.csv"),
            &self.x_test,
            &self.y_test,
            &self.task_test,
        )?;
        std::fs::write(
            dir.join("provenance.json"),
            serde_json::to_string_pretty(&self.provenance)?,
        )?;
        Ok(())
    }
}

fn write_split(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>, task: &[usize]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{},label,task", header.join(","))?;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            write!(w, "{:e},", x[(i, j)])?;
        }
        writeln!(w, "{:e},{}", y[i], task[i])?;
    }
    w.flush()?;
    Ok(())
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// `y(x) = a_Tᵀ ReLU(W_T x/√N0)/√N_T`.
#[derive(Clone, Debug)]
pub struct ReluTeacher {
    pub w: DMatrix<f64>,
    pub a: DVector<f64>,
}

impl ReluTeacher {
    pub fn labels(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let n0 = self.w.ncols() as f64;
        let nt = self.w.nrows() as f64;
        let hidden = (x * self.w.transpose() / n0.sqrt()).map(|v| v.max(0.0));
        hidden * &self.a / nt.sqrt()
    }
}

/// Gaussian inputs labelled by a random ReLU teacher with additive label
/// noise `ε`; test inputs are `√(1−γ)x + √γη` for held-out `x`.
pub fn noisy_relu_teacher(
    n0: usize,
    p: usize,
    p_test: usize,
    n_teacher: usize,
    gamma: f64,
    eps: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&gamma) || eps < 0.0 {
        return Err(Error::DomainError(format!(
            "need 0 <= gamma <= 1 and eps >= 0, got {gamma}, {eps}"
        )));
    }
    let teacher = {
        let mut rng = child_rng(seed, 0);
        let w = gaussian(n_teacher, n0, &mut rng);
        let a = gaussian(n_teacher, 1, &mut rng).column(0).into_owned();
        ReluTeacher { w, a }
    };
    let mut rng = child_rng(seed, 1);
    let x_train = gaussian(p, n0, &mut rng);
    let clean = gaussian(p_test, n0, &mut rng);
    let eta = gaussian(p_test, n0, &mut rng);
    let x_test = clean * (1.0 - gamma).sqrt() + eta * gamma.sqrt();
    let mut noise_rng = child_rng(seed, 2);
    let y_train = teacher.labels(&x_train) + gaussian(p, 1, &mut noise_rng).column(0) * eps;
    let y_test = teacher.labels(&x_test) + gaussian(p_test, 1, &mut noise_rng).column(0) * eps;
    let provenance = Provenance::new("noisy_relu_teacher", seed)
        .with("N0", n0)
        .with("P", p)
        .with("P_t", p_test)
        .with("N_T", n_teacher)
        .with("gamma", gamma)
        .with("eps", eps);
    Ok(Dataset {
        x_train,
        y_train,
        x_test,
        y_test,
        task_train: vec![0; p],
        task_test: vec![0; p_test],
        n_tasks: 1,
        provenance,
    })
}

/// Block-clustered inputs and a ReLU teacher whose input weights on the
/// first block have variance `ρ` (all other blocks variance 1).
///
/// The `m` blocks of an example each pick one of `n_clusters` shared centers
/// `c` in `R^{N0/m}` independently and are set to `√(1−γ)c + √γη`.
#[allow(clippy::too_many_arguments)]
pub fn clustered_preferred_teacher(
    n0: usize,
    m: usize,
    n_clusters: usize,
    gamma: f64,
    rho: f64,
    n_teacher: usize,
    p: usize,
    p_test: usize,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 || n0 % m != 0 {
        return Err(Error::DimensionMismatch(format!(
            "m = {m} must divide N0 = {n0}"
        )));
    }
    if n_clusters == 0 {
        return Err(Error::DomainError("n_clusters must be positive".into()));
    }
    if !(0.0..=1.0).contains(&gamma) || rho < 0.0 {
        return Err(Error::DomainError(format!(
            "need 0 <= gamma <= 1 and rho >= 0, got {gamma}, {rho}"
        )));
    }
    let block = n0 / m;
    let mut rng = child_rng(seed, 0);
    let centers = gaussian(n_clusters, block, &mut rng);
    let mut w = gaussian(n_teacher, n0, &mut rng);
    let rho_sd = rho.sqrt();
    for i in 0..n_teacher {
        for j in 0..block {
            w[(i, j)] *= rho_sd;
        }
    }
    let a = gaussian(n_teacher, 1, &mut rng).column(0).into_owned();
    let teacher = ReluTeacher { w, a };

    let sample = |count: usize, stream: u64| {
        let mut rng = child_rng(seed, stream);
        let mut x = DMatrix::zeros(count, n0);
        for i in 0..count {
            for k in 0..m {
                let c = rand::Rng::random_range(&mut rng, 0..n_clusters);
                for j in 0..block {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    x[(i, k * block + j)] =
                        (1.0 - gamma).sqrt() * centers[(c, j)] + gamma.sqrt() * eta;
                }
            }
        }
        x
    };
    let x_train = sample(p, 1);
    let x_test = sample(p_test, 2);
    let y_train = teacher.labels(&x_train);
    let y_test = teacher.labels(&x_test);
    let provenance = Provenance::new("clustered_preferred_teacher", seed)
        .with("N0", n0)
        .with("m", m)
        .with("n_clusters", n_clusters)
        .with("gamma", gamma)
        .with("rho", rho)
        .with("N_T", n_teacher)
        .with("P", p)
        .with("P_t", p_test);
    Ok(Dataset {
        x_train,
        y_train,
        x_test,
        y_test,
        task_train: vec![0; p],
        task_test: vec![0; p_test],
        n_tasks: 1,
        provenance,
    })
}

/// Maps a digit to a ±1 label, or `None` if the digit is not used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRule {
    /// Even digits +1, odd digits −1.
    Parity,
    /// Digit `neg` → −1, digit `pos` → +1, all others dropped.
    Pair { neg: u8, pos: u8 },
}

impl LabelRule {
    pub fn label(&self, digit: u8) -> Option<f64> {
        match *self {
            LabelRule::Parity => Some(if digit % 2 == 0 { 1.0 } else { -1.0 }),
            LabelRule::Pair { neg, pos } => {
                if digit == neg {
                    Some(-1.0)
                } else if digit == pos {
                    Some(1.0)
                } else {
                    None
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            LabelRule::Parity => "parity".into(),
            LabelRule::Pair { neg, pos } => format!("pair:{neg}:{pos}"),
        }
    }
}

/// Standardizes columns with train statistics; constant features become 0.
fn standardize(train: &mut DMatrix<f64>, test: &mut DMatrix<f64>) {
    let p = train.nrows() as f64;
    for j in 0..train.ncols() {
        let mean = train.column(j).sum() / p;
        let var = train
            .column(j)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / p;
        let sd = var.sqrt();
        let inv = if sd > 1e-12 * (1.0 + mean.abs()) {
            1.0 / sd
        } else {
            0.0
        };
        for v in train.column_mut(j).iter_mut() {
            *v = (*v - mean) * inv;
        }
        for v in test.column_mut(j).iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

/// Balanced binary classification set from raw images.
///
/// Pixels are standardized per feature with train statistics. With
/// `n0 = Some(d)` they are then projected through `ReLU(W0 x/√D)` with
/// standard normal `W0 ∈ R^{d×D}` and standardized again.
pub fn preprocess_classification(
    raw: &RawImages,
    n0: Option<usize>,
    p: usize,
    p_test: usize,
    rule: LabelRule,
    seed: u64,
) -> Result<Dataset> {
    if p % 2 != 0 || p_test % 2 != 0 {
        return Err(Error::DomainError(format!(
            "P = {p} and P_t = {p_test} must be even for balanced classes"
        )));
    }
    let mut rng = child_rng(seed, 0);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for i in 0..raw.count() {
        if let Some(y) = rule.label(raw.labels[i]) {
            by_class[usize::from(y > 0.0)].push(i);
        }
    }
    let (half, half_t) = (p / 2, p_test / 2);
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < half + half_t {
            return Err(Error::InsufficientClassSamples {
                class: if c == 1 { 1 } else { -1 },
                needed: half + half_t,
                available: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
    }
    let mut train: Vec<usize> = by_class
        .iter()
        .flat_map(|v| v[..half].iter().copied())
        .collect();
    let mut test: Vec<usize> = by_class
        .iter()
        .flat_map(|v| v[half..half + half_t].iter().copied())
        .collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let d = raw.pixel_dim();
    let to_matrix = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), d, |i, j| raw.image(rows[i])[j] as f64 / 255.0)
    };
    let mut x_train = to_matrix(&train);
    let mut x_test = to_matrix(&test);
    standardize(&mut x_train, &mut x_test);
    if let Some(dim) = n0 {
        let w0 = gaussian(dim, d, &mut child_rng(seed, 1));
        let scale = 1.0 / (d as f64).sqrt();
        x_train = (&x_train * w0.transpose() * scale).map(|v| v.max(0.0));
        x_test = (&x_test * w0.transpose() * scale).map(|v| v.max(0.0));
        standardize(&mut x_train, &mut x_test);
    }
    let labels = |rows: &[usize]| {
        DVector::from_iterator(
            rows.len(),
            rows.iter()
                .map(|&i| rule.label(raw.labels[i]).expect("filtered")),
        )
    };
    let provenance = Provenance::new("preprocess_classification", seed)
        .with("N0", n0.map_or(Value::Null, Value::from))
        .with("P", p)
        .with("P_t", p_test)
        .with("label_rule", rule.name())
        .with("raw_count", raw.count());
    Ok(Dataset {
        x_train,
        y_train: labels(&train),
        x_test,
        y_test: labels(&test),
        task_train: vec![0; p],
        task_test: vec![0; p_test],
        n_tasks: 1,
        provenance,
    })
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn permute_columns(x: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, perm[j])])
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

fn repeat(v: &DVector<f64>, times: usize) -> DVector<f64> {
    DVector::from_iterator(v.len() * times, (0..times).flat_map(|_| v.iter().copied()))
}

/// One task per coordinate permutation `π_k` of the inputs, `π_0` the identity.
pub fn permuted_tasks(base: &Dataset, n_perms: usize, seed: u64) -> Result<Dataset> {
    if n_perms == 0 {
        return Err(Error::DomainError("n_perms must be at least 1".into()));
    }
    let d = base.input_dim();
    let mut rng = rng_from_seed(seed);
    let perms: Vec<Vec<usize>> = (0..n_perms)
        .map(|k| {
            if k == 0 {
                (0..d).collect()
            } else {
                random_permutation(d, &mut rng)
            }
        })
        .collect();
    let x_train = stack(
        &perms
            .iter()
            .map(|p| permute_columns(&base.x_train, p))
            .collect::<Vec<_>>(),
    );
    let x_test = stack(
        &perms
            .iter()
            .map(|p| permute_columns(&base.x_test, p))
            .collect::<Vec<_>>(),
    );
    let mut provenance = base.provenance.clone();
    provenance.generator = format!("permuted_tasks({})", base.provenance.generator);
    provenance.params.insert("n_perms".into(), n_perms.into());
    provenance.params.insert("perm_seed".into(), seed.into());
    Ok(Dataset {
        x_train,
        y_train: repeat(&base.y_train, n_perms),
        x_test,
        y_test: repeat(&base.y_test, n_perms),
        task_train: (0..n_perms)
            .flat_map(|k| std::iter::repeat_n(k, base.n_train()))
            .collect(),
        task_test: (0..n_perms)
            .flat_map(|k| std::iter::repeat_n(k, base.n_test()))
            .collect(),
        n_tasks: n_perms,
        provenance,
    })
}

/// Two tasks on the same inputs: half of each class is passed through one
/// fixed random pixel permutation. Task 0 labels the digit (base labels:
/// digit 0 → −1, digit 1 → +1); task 1 labels permuted inputs +1 and
/// un-permuted inputs −1.
pub fn conflicting_label_tasks(base: &Dataset, seed: u64) -> Result<Dataset> {
    if base
        .y_train
        .iter()
        .chain(base.y_test.iter())
        .any(|&y| y != 1.0 && y != -1.0)
    {
        return Err(Error::DomainError(
            "conflicting_label_tasks needs ±1 labels".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let perm = random_permutation(base.input_dim(), &mut rng);
    let mut split = |x: &DMatrix<f64>, y: &DVector<f64>| {
        let mut flags = vec![false; y.len()];
        for class in [-1.0, 1.0] {
            let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..idx.len() / 2] {
                flags[i] = true;
            }
        }
        let mut xs = x.clone();
        for (i, &f) in flags.iter().enumerate() {
            if f {
                for j in 0..x.ncols() {
                    xs[(i, j)] = x[(i, perm[j])];
                }
            }
        }
        let task2 =
            DVector::from_iterator(y.len(), flags.iter().map(|&f| if f { 1.0 } else { -1.0 }));
        (xs, task2)
    };
    let (xtr, y2tr) = split(&base.x_train, &base.y_train);
    let (xte, y2te) = split(&base.x_test, &base.y_test);
    let join = |a: &DVector<f64>, b: &DVector<f64>| {
        DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
    };
    let (p, pt) = (base.n_train(), base.n_test());
    let mut provenance = base.provenance.clone();
    provenance.generator = format!("conflicting_label_tasks({})", base.provenance.generator);
    provenance.params.insert("perm_seed".into(), seed.into());
    Ok(Dataset {
        x_train: stack(&[xtr.clone(), xtr]),
        y_train: join(&base.y_train, &y2tr),
        x_test: stack(&[xte.clone(), xte]),
        y_test: join(&base.y_test, &y2te),
        task_train: [vec![0; p], vec![1; p]].concat(),
        task_test: [vec![0; pt], vec![1; pt]].concat(),
        n_tasks: 2,
        provenance,
    })
}
