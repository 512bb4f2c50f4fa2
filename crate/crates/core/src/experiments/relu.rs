//! Width-matched single-hidden-layer ReLU baseline trained with the same
//! gradient-descent protocol as the gated networks.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::predictor::PredictorStats;
use crate::rng::{derive_seed, rng_from_seed};
use crate::samplers::{output_stats, TrainConfig};

/// `f(x) = aᵀReLU(Wx/√N0)/√N` with `W` of shape `N×N0`.
#[derive(Clone, Debug)]
pub struct ReluNet {
    pub w: DMatrix<f64>,
    pub a: DVector<f64>,
}

impl ReluNet {
    pub fn init(n0: usize, width: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut draw = || -> f64 {
            sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        };
        let w = DMatrix::from_fn(width, n0, |_, _| draw());
        let a = DVector::from_fn(width, |_, _| draw());
        ReluNet { w, a }
    }

    fn preactivations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.w.transpose() / (x.ncols() as f64).sqrt()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let h = self.preactivations(x).map(|v| v.max(0.0));
        h * &self.a / (self.a.len() as f64).sqrt()
    }

    /// Outputs and the gradient of `(1/2P)Σ(f − y)²`.
    fn output_and_grad(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, ReluNet) {
        let pre = self.preactivations(x);
        let h = pre.map(|v| v.max(0.0));
        let sn = (self.a.len() as f64).sqrt();
        let f = &h * &self.a / sn;
        let scale = 1.0 / y.len().max(1) as f64;
        let r = (&f - y) * scale;
        let ga = h.transpose() * &r / sn;
        let mut back = &r * self.a.transpose() / sn;
        back.zip_apply(&pre, |b, p| {
            if p <= 0.0 {
                *b = 0.0
            }
        });
        let gw = back.transpose() * x / (x.ncols() as f64).sqrt();
        (f, ReluNet { w: gw, a: ga })
    }
}

fn mse(f: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (f - y).norm_squared() / y.len().max(1) as f64
}

/// Full-batch GD with step rejection and halving; returns the trained
/// network and whether the training MSE reached `cfg.stop_train_mse`.
pub fn relu_gd_one(
    data: &Dataset,
    width: usize,
    sigma: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ReluNet, bool)> {
    cfg.validate_gd()?;
    let (x, y) = (&data.x_train, &data.y_train);
    let mut net = ReluNet::init(x.ncols(), width, sigma, seed);
    let (f, mut grad) = net.output_and_grad(x, y);
    let mut loss = mse(&f, y);
    let mut lr = cfg.learning_rate;
    let mut steps = 0;
    while loss >= cfg.stop_train_mse
        && steps < cfg.max_steps
        && lr >= 1e-12 * cfg.learning_rate
        && lr > 0.0
    {
        steps += 1;
        let trial = ReluNet {
            w: &net.w - &grad.w * lr,
            a: &net.a - &grad.a * lr,
        };
        let (tf, tg) = trial.output_and_grad(x, y);
        let tl = mse(&tf, y);
        if tl.is_finite() && tl <= loss {
            net = trial;
            grad = tg;
            loss = tl;
        } else {
            lr *= 0.5;
        }
    }
    Ok((net, loss < cfg.stop_train_mse))
}

/// Test-set predictor statistics of a GD-trained ReLU ensemble of
/// `cfg.n_seeds` members. Runs that miss the stopping criterion are
/// dropped with a warning.
pub fn relu_baseline_train(
    data: &Dataset,
    width: usize,
    sigma: f64,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<PredictorStats> {
    let runs: Vec<(ReluNet, bool)> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|i| relu_gd_one(data, width, sigma, cfg, derive_seed(base_seed, i as u64)))
        .collect::<Result<_>>()?;
    let failed = runs.iter().filter(|r| !r.1).count();
    if failed > 0 {
        log::warn!(
            "{failed} of {} ReLU baseline runs did not converge and were excluded",
            runs.len()
        );
    }
    let outputs: Vec<DVector<f64>> = runs
        .iter()
        .filter(|r| r.1)
        .map(|r| r.0.forward(&data.x_test))
        .collect();
    if outputs.len() < 2 {
        return Err(Error::NoConvergence {
            iterations: cfg.max_steps,
            residual: f64::NAN,
        });
    }
    output_stats(&outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Provenance;
    use crate::predictor::error_rate;
    use crate::rng::child_rng;

    fn dataset(x: DMatrix<f64>, y: DVector<f64>, xt: DMatrix<f64>, yt: DVector<f64>) -> Dataset {
        let (p, pt) = (y.len(), yt.len());
        Dataset {
            x_train: x,
            y_train: y,
            x_test: xt,
            y_test: yt,
            task_train: vec![0; p],
            task_test: vec![0; pt],
            n_tasks: 1,
            provenance: Provenance::new("toy", 0),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = child_rng(1, 0);
        let x = DMatrix::from_fn(7, 3, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(7, |_, _| StandardNormal.sample(&mut rng));
        let net = ReluNet::init(3, 4, 1.0, 2);
        let (_, g) = net.output_and_grad(&x, &y);
        let loss = |n: &ReluNet| (n.forward(&x) - &y).norm_squared() / 14.0;
        let h = 1e-6;
        let mut p = net.clone();
        p.w[(1, 2)] += h;
        let mut m = net.clone();
        m.w[(1, 2)] -= h;
        assert!(((loss(&p) - loss(&m)) / (2.0 * h) - g.w[(1, 2)]).abs() < 1e-6);
        let mut p = net.clone();
        p.a[3] += h;
        let mut m = net.clone();
        m.a[3] -= h;
        assert!(((loss(&p) - loss(&m)) / (2.0 * h) - g.a[3]).abs() < 1e-6);
    }

    #[test]
    fn zero_targets_give_near_zero_outputs() {
        let mut rng = child_rng(3, 0);
        let x = DMatrix::from_fn(20, 5, |_, _| StandardNormal.sample(&mut rng));
        let xt = DMatrix::from_fn(10, 5, |_, _| StandardNormal.sample(&mut rng));
        let d = dataset(x, DVector::zeros(20), xt, DVector::zeros(10));
        let cfg = TrainConfig {
            learning_rate: 1.0,
            n_seeds: 4,
            stop_train_mse: 1e-6,
            ..Default::default()
        };
        let (net, ok) = relu_gd_one(&d, 30, 1.0, &cfg, 0).unwrap();
        assert!(ok);
        assert!(mse(&net.forward(&d.x_train), &d.y_train) < 1e-6);
        relu_baseline_train(&d, 30, 1.0, &cfg, 0).unwrap();
    }

    #[test]
    fn separable_toy_is_classified() {
        let mut rng = child_rng(4, 0);
        let dir = DVector::from_fn(6, |_, _| StandardNormal.sample(&mut rng)).normalize();
        // unit margin on either side of the separating hyperplane
        let mut sample = |n: usize| {
            let mut x: DMatrix<f64> =
                DMatrix::from_fn(n, 6, |_, _| StandardNormal.sample(&mut rng));
            let y = DVector::from_fn(n, |i, _| x.row(i).dot(&dir.transpose()).signum());
            for i in 0..n {
                let shift = dir.transpose() * y[i];
                x.row_mut(i).zip_apply(&shift, |v, s| *v += s);
            }
            (x, y)
        };
        let (x, y) = sample(200);
        let (xt, yt) = sample(400);
        let d = dataset(x, y, xt, yt);
        let cfg = TrainConfig {
            learning_rate: 2.0,
            n_seeds: 5,
            stop_train_mse: 1e-2,
            max_steps: 20_000,
            ..Default::default()
        };
        let stats = relu_baseline_train(&d, 100, 1.0, &cfg, 9).unwrap();
        let (_, err) = error_rate(&stats, d.y_test.as_slice()).unwrap();
        assert!(err < 0.05, "error rate {err}");
    }
}
