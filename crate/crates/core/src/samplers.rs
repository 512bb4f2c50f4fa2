//! Finite-width validation samplers: full-batch gradient-descent ensembles,
//! Langevin posterior sampling, and the statistics computed from them.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gatings::GatingFamily;
use crate::network::{forward_gated, init_params, output_and_grad, Architecture, Params};
use crate::numerics::SymMatrix;
use crate::predictor::PredictorStats;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// GD stops once the training MSE `(1/P)Σ(f − y)²` falls below this.
    pub stop_train_mse: f64,
    pub temperature: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_seeds: usize,
    /// Independent Langevin chains pooled by [`langevin_chains`].
    pub n_chains: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_steps: 20_000,
            stop_train_mse: 1e-3,
            temperature: 1e-2,
            burn_in: 10_000,
            thinning: 20,
            n_seeds: 20,
            n_chains: 1,
        }
    }
}

impl TrainConfig {
    /// GD accepts a zero learning rate; Langevin additionally needs
    /// `T > 0`, `ε > 0` and `burn_in < max_steps`.
    pub fn validate_gd(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0)
            || self.max_steps == 0
            || !(self.stop_train_mse > 0.0)
            || self.n_seeds == 0
        {
            return Err(Error::Config(format!(
                "invalid gradient-descent configuration {self:?}"
            )));
        }
        Ok(())
    }

    pub fn validate_langevin(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.temperature > 0.0
            && self.burn_in < self.max_steps
            && self.thinning > 0
            && self.n_chains > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Langevin configuration {self:?}"
            )))
        }
    }
}

/// Per-run record: steps, final training error and a subsampled loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub steps: usize,
    pub final_train_mse: f64,
    pub final_learning_rate: f64,
    pub converged: bool,
    pub loss_curve: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct Member {
    pub params: Params,
    pub log: RunLog,
}

fn train_mse(f: &DVector<f64>, y: &DVector<f64>) -> f64 {
    if y.is_empty() {
        0.0
    } else {
        (f - y).norm_squared() / y.len() as f64
    }
}

const CURVE_POINTS: usize = 200;

/// Full-batch gradient descent on `(1/2P)Σ(f − y)²` from a `N(0, σ²)`
/// initialization. A step that increases the loss is undone and the
/// learning rate halved.
pub fn gd_train_one(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gates: &DMatrix<f64>,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Member> {
    cfg.validate_gd()?;
    let p = y.len().max(1) as f64;
    let mut params = init_params(arch, seed);
    let (f, mut grad) = output_and_grad(arch, &params, gates, x, y, 1.0 / p)?;
    let mut mse = train_mse(&f, y);
    let mut lr = cfg.learning_rate;
    let every = (cfg.max_steps / CURVE_POINTS).max(1);
    let mut curve = vec![(0, mse)];
    let mut steps = 0;
    let mut flat = params.to_flat();
    while mse >= cfg.stop_train_mse && steps < cfg.max_steps && lr > 0.0 {
        steps += 1;
        let trial_flat = &flat - grad.to_flat() * lr;
        let mut trial = params.clone();
        trial.set_flat(&trial_flat)?;
        let (tf, tg) = output_and_grad(arch, &trial, gates, x, y, 1.0 / p)?;
        let tmse = train_mse(&tf, y);
        if tmse.is_finite() && tmse <= mse {
            params = trial;
            flat = trial_flat;
            grad = tg;
            mse = tmse;
        } else {
            lr *= 0.5;
            if lr < 1e-12 * cfg.learning_rate {
                break;
            }
        }
        if steps % every == 0 {
            curve.push((steps, mse));
        }
    }
    let converged = mse < cfg.stop_train_mse;
    if curve.last().map(|c| c.0) != Some(steps) {
        curve.push((steps, mse));
    }
    Ok(Member {
        params,
        log: RunLog {
            seed,
            steps,
            final_train_mse: mse,
            final_learning_rate: lr,
            converged,
            loss_curve: curve,
        },
    })
}

/// `cfg.n_seeds` independent GD runs with seeds `derive_seed(base_seed, i)`.
/// Runs that miss the stopping criterion are kept with `converged = false`
/// and excluded by [`converged_members`].
pub fn gd_train(
    data: &Dataset,
    family: &GatingFamily,
    arch: &Architecture,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<Vec<Member>> {
    cfg.validate_gd()?;
    let gates = family.evaluate(&data.x_train)?;
    (0..cfg.n_seeds)
        .into_par_iter()
        .map(|i| {
            gd_train_one(
                &data.x_train,
                &data.y_train,
                &gates,
                arch,
                cfg,
                derive_seed(base_seed, i as u64),
            )
        })
        .collect()
}

pub fn converged_members(members: &[Member]) -> Vec<&Params> {
    let failed: Vec<u64> = members
        .iter()
        .filter(|m| !m.log.converged)
        .map(|m| m.log.seed)
        .collect();
    if !failed.is_empty() {
        let err = Error::NoConvergence {
            iterations: members[0].log.steps,
            residual: f64::NAN,
        };
        log::warn!(
            "{} of {} seeds excluded ({err}): {failed:?}",
            failed.len(),
            members.len()
        );
    }
    members
        .iter()
        .filter(|m| m.log.converged)
        .map(|m| &m.params)
        .collect()
}

/// Flat-vector Langevin trace: snapshots after burn-in at the thinning
/// interval, and the energy at every snapshot.
#[derive(Clone, Debug)]
pub struct LangevinTrace {
    pub snapshots: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
}

/// Unadjusted Langevin dynamics `θ ← θ − ε∇E + √(2εT)ξ` for an energy
/// returning `(E, ∇E)`. Errors with `Diverged` once `E` exceeds 10⁶ times
/// its initial value.
pub fn langevin<F>(
    mut energy: F,
    theta0: DVector<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LangevinTrace>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    cfg.validate_langevin()?;
    let mut rng = rng_from_seed(seed);
    let mut theta = theta0;
    let (e0, mut grad) = energy(&theta)?;
    let limit = 1e6 * e0.abs().max(1.0);
    let noise = (2.0 * cfg.learning_rate * cfg.temperature).sqrt();
    let mut trace = LangevinTrace {
        snapshots: Vec::new(),
        energies: Vec::new(),
    };
    for step in 1..=cfg.max_steps {
        theta.axpy(-cfg.learning_rate, &grad, 1.0);
        for v in theta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise * z;
        }
        let (e, g) = energy(&theta)?;
        if !(e <= limit) {
            return Err(Error::Diverged { step, energy: e });
        }
        grad = g;
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thinning == 0 {
            trace.snapshots.push(theta.clone());
            trace.energies.push(e);
        }
    }
    Ok(trace)
}

#[derive(Clone, Debug)]
pub struct LangevinRun {
    pub seed: u64,
    pub snapshots: Vec<Params>,
    pub energies: Vec<f64>,
}

/// Samples the posterior `∝ exp(−E/T)` with
/// `E = ½Σ(f − y)² + (T/2σ²)|Θ|²`, starting from the prior.
pub fn langevin_sample(
    data: &Dataset,
    family: &GatingFamily,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LangevinRun> {
    let gates = family.evaluate(&data.x_train)?;
    langevin_sample_gated(&data.x_train, &data.y_train, &gates, arch, cfg, seed)
}

pub fn langevin_sample_gated(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gates: &DMatrix<f64>,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LangevinRun> {
    cfg.validate_langevin()?;
    let mut work = init_params(arch, derive_seed(seed, 0));
    let prior = cfg.temperature / (arch.sigma * arch.sigma);
    let energy = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        work.set_flat(theta)?;
        let (f, grad) = output_and_grad(arch, &work, gates, x, y, 1.0)?;
        let e = 0.5 * (&f - y).norm_squared() + 0.5 * prior * theta.norm_squared();
        Ok((e, grad.to_flat() + theta * prior))
    };
    let theta0 = init_params(arch, derive_seed(seed, 0)).to_flat();
    let trace = langevin(energy, theta0, cfg, derive_seed(seed, 1))?;
    let template = Params::zeros(arch);
    let snapshots = trace
        .snapshots
        .iter()
        .map(|t| {
            let mut p = template.clone();
            p.set_flat(t).map(|_| p)
        })
        .collect::<Result<_>>()?;
    Ok(LangevinRun {
        seed,
        snapshots,
        energies: trace.energies,
    })
}

/// `cfg.n_chains` independent chains with seeds `derive_seed(base_seed, i)`.
pub fn langevin_chains(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gates: &DMatrix<f64>,
    arch: &Architecture,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<Vec<LangevinRun>> {
    cfg.validate_langevin()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|i| langevin_sample_gated(x, y, gates, arch, cfg, derive_seed(base_seed, i as u64)))
        .collect()
}

/// Sample estimate of `U^{mn} = ⟨(1/N)Σ_i a_{m,i}a_{n,i}⟩` with the
/// standard error of every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutCovariance {
    pub u: SymMatrix,
    pub std_err: DMatrix<f64>,
    pub n_samples: usize,
}

pub const MIN_COVARIANCE_SAMPLES: usize = 30;

pub fn estimate_readout_covariance<'a, I>(snapshots: I) -> Result<ReadoutCovariance>
where
    I: IntoIterator<Item = &'a Params>,
{
    let mut sum: Option<DMatrix<f64>> = None;
    let mut sum_sq: Option<DMatrix<f64>> = None;
    let mut count = 0;
    for p in snapshots {
        let a = &p.readout;
        let s = a * a.transpose() / a.ncols() as f64;
        let sq = s.component_mul(&s);
        match (&mut sum, &mut sum_sq) {
            (Some(acc), Some(acc_sq)) => {
                if acc.shape() != s.shape() {
                    return Err(Error::DimensionMismatch(
                        "snapshots with different gate counts".into(),
                    ));
                }
                *acc += &s;
                *acc_sq += &sq;
            }
            _ => {
                sum = Some(s);
                sum_sq = Some(sq);
            }
        }
        count += 1;
    }
    if count < MIN_COVARIANCE_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_COVARIANCE_SAMPLES,
            got: count,
        });
    }
    let n = count as f64;
    let mean = sum.expect("count > 0") / n;
    let second = sum_sq.expect("count > 0") / n;
    let std_err = DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
        let var = (second[(i, j)] - mean[(i, j)].powi(2)).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(ReadoutCovariance {
        u: SymMatrix::symmetrized(mean),
        std_err,
        n_samples: count,
    })
}

/// Per-test-point sample mean and unbiased sample variance of the network
/// outputs over an ensemble.
pub fn ensemble_predictor_stats<'a, I>(
    members: I,
    family: &GatingFamily,
    arch: &Architecture,
    x_test: &DMatrix<f64>,
) -> Result<PredictorStats>
where
    I: IntoIterator<Item = &'a Params>,
{
    let gates = family.evaluate(x_test)?;
    let outputs: Vec<DVector<f64>> = members
        .into_iter()
        .map(|p| forward_gated(arch, p, &gates, x_test))
        .collect::<Result<_>>()?;
    output_stats(&outputs)
}

/// Mean and unbiased variance across a set of output vectors.
pub fn output_stats(outputs: &[DVector<f64>]) -> Result<PredictorStats> {
    if outputs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: outputs.len(),
        });
    }
    let k = outputs.len() as f64;
    let len = outputs[0].len();
    if outputs.iter().any(|o| o.len() != len) {
        return Err(Error::DimensionMismatch(
            "ensemble outputs of different lengths".into(),
        ));
    }
    let mean: DVector<f64> = outputs.iter().fold(DVector::zeros(len), |acc, o| acc + o) / k;
    let variance = (0..len)
        .map(|i| {
            outputs
                .iter()
                .map(|o| (o[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (k - 1.0)
        })
        .collect();
    Ok(PredictorStats {
        mean: mean.iter().copied().collect(),
        variance,
    })
}
