//! Desk-scale experiment sweeps. Each subcommand reads flat settings,
//! resolves every parameter (recorded in the run manifest), and produces a
//! fixed-schema results table plus optional kernel dumps.

mod capacity;
pub mod config;
mod depth;
mod gating;
mod output;
pub mod relu;
mod sigma;
mod tasks;
mod width;

use nalgebra::DVector;

pub use capacity::run_capacity_sweep;
pub use config::{Resolver, Setting, Settings};
pub use depth::run_depth_sweep;
pub use gating::run_gating_compare;
pub use output::{labeled_matrix, Cell, Run, RunOutput, Table};
pub use relu::relu_baseline_train;
pub use sigma::run_sigma_sweep;
pub use tasks::run_multitask;
pub use width::{block_amplitude_ratio, run_width_sweep};

use crate::datasets::{load_idx, synthetic_digits, RawImages};
use crate::error::{Error, Result};
use crate::gp::KernelBundle;
use crate::numerics::numerical_rank;
use crate::predictor::{kernel_predict, kernel_predict_pinv, PredictorStats};
use crate::renorm::{predict, Mode, OrderParameterSet, SolverConfig};
use crate::rng::derive_seed;
use crate::samplers::TrainConfig;

pub const SUBCOMMANDS: [&str; 6] = ["capacity", "width", "sigma", "gating", "depth", "multitask"];

pub fn run(subcommand: &str, settings: &Settings) -> Result<Run> {
    let (parameters, output) = match subcommand {
        "capacity" => run_capacity_sweep(settings)?,
        "width" => run_width_sweep(settings)?,
        "sigma" => run_sigma_sweep(settings)?,
        "gating" => run_gating_compare(settings)?,
        "depth" => run_depth_sweep(settings)?,
        "multitask" => run_multitask(settings)?,
        other => {
            return Err(Error::Config(format!(
                "unknown subcommand {other:?}, expected one of {SUBCOMMANDS:?}"
            )))
        }
    };
    Ok(Run {
        subcommand: subcommand.into(),
        parameters,
        output,
    })
}

/// Seed streams of one repeat.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Seeds {
    pub data: u64,
    pub gating: u64,
    pub sampler: u64,
}

impl Seeds {
    pub fn new(base: u64, repeat: usize) -> Self {
        let r = derive_seed(base, repeat as u64);
        Seeds {
            data: derive_seed(r, 1),
            gating: derive_seed(r, 2),
            sampler: derive_seed(r, 3),
        }
    }
}

/// Image source: IDX files in `mnist_dir` (`train-images-idx3-ubyte`,
/// `train-labels-idx1-ubyte`) or synthetic digits when it is empty.
pub(crate) struct DigitSource {
    dir: String,
    count: usize,
}

impl DigitSource {
    pub fn resolve(r: &mut Resolver) -> Result<Self> {
        Ok(DigitSource {
            dir: r.get("mnist_dir", String::new())?,
            count: r.get("synthetic_count", 4000usize)?,
        })
    }

    pub fn load(&self, seed: u64) -> Result<RawImages> {
        if self.dir.is_empty() {
            Ok(synthetic_digits(self.count, seed))
        } else {
            let dir = std::path::Path::new(&self.dir);
            load_idx(
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            )
        }
    }
}

pub(crate) fn solver_settings(r: &mut Resolver, temperature: f64) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let mode = match r.get("solver_mode", "auto".to_string())?.as_str() {
        "auto" => Mode::Auto,
        "fixed_point" => Mode::FixedPoint,
        "minimize" => Mode::Minimize,
        "both" => Mode::Both,
        other => return Err(Error::Config(format!("unknown solver_mode {other:?}"))),
    };
    let cfg = SolverConfig {
        mode,
        tol: r.get("solver_tol", d.tol)?,
        max_iters: r.get("solver_max_iters", d.max_iters)?,
        temperature: r.get("temperature", temperature)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn gd_settings(
    r: &mut Resolver,
    learning_rate: f64,
    seeds: usize,
) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: r.get("learning_rate", learning_rate)?,
        max_steps: r.get("max_steps", d.max_steps)?,
        stop_train_mse: r.get("stop_train_mse", d.stop_train_mse)?,
        n_seeds: r.get("gd_seeds", seeds)?,
        ..d
    };
    cfg.validate_gd()?;
    Ok(cfg)
}

/// Zero-temperature predictor that switches to the pseudo-inverse when the
/// training kernel is rank deficient or fails the Cholesky residual check.
#[derive(Clone, Debug)]
pub struct FlaggedPrediction {
    pub stats: PredictorStats,
    pub rank: usize,
    pub rank_deficient: bool,
    pub pinv: bool,
}

pub fn predict_flagged(bundle: &KernelBundle, y: &DVector<f64>) -> Result<FlaggedPrediction> {
    let rank = numerical_rank(&bundle.k_train);
    let rank_deficient = rank < bundle.k_train.dim();
    let pinv = || kernel_predict_pinv(&bundle.k_train, &bundle.k_test, &bundle.k_diag_test, y);
    if rank_deficient {
        return Ok(FlaggedPrediction {
            stats: pinv()?,
            rank,
            rank_deficient,
            pinv: true,
        });
    }
    match kernel_predict(&bundle.k_train, &bundle.k_test, &bundle.k_diag_test, y, 0.0) {
        Ok(stats) => Ok(FlaggedPrediction {
            stats,
            rank,
            rank_deficient,
            pinv: false,
        }),
        Err(Error::SingularKernel { .. }) => Ok(FlaggedPrediction {
            stats: pinv()?,
            rank,
            rank_deficient,
            pinv: true,
        }),
        Err(e) => Err(e),
    }
}

/// Renormalized-kernel predictor: the finite-temperature formula when
/// `T > 0`, otherwise [`predict_flagged`].
pub fn theory_predict(
    ops: &OrderParameterSet,
    bundle: &KernelBundle,
    y: &DVector<f64>,
) -> Result<PredictorStats> {
    if ops.temperature > 0.0 {
        predict(ops, bundle, y)
    } else {
        Ok(predict_flagged(bundle, y)?.stats)
    }
}

/// Marks the grid points where the kernel turns from rank deficient to
/// full rank along a sweep.
pub fn threshold_flags(rank_deficient: &[bool]) -> Vec<bool> {
    (0..rank_deficient.len())
        .map(|i| i > 0 && rank_deficient[i - 1] && !rank_deficient[i])
        .collect()
}
