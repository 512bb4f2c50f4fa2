use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    predict_flagged, solver_settings, theory_predict, threshold_flags, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::noisy_relu_teacher;
use crate::error::Result;
use crate::gatings::random_halfspace_family;
use crate::gp::{gp_kernel, input_kernel};
use crate::network::{capacity, effective_features, min_norm_interpolation_error};
use crate::predictor::bias_variance;
use crate::renorm::{renorm_kernel, solve_order_params_deep};
use crate::row;

const COLUMNS: [&str; 15] = [
    "depth",
    "m",
    "capacity",
    "rank",
    "rank_deficient",
    "at_threshold",
    "train_error",
    "gp_solver",
    "gp_bias",
    "gp_variance",
    "gp_eps_g",
    "fw_status",
    "fw_bias",
    "fw_variance",
    "fw_eps_g",
];

struct Point {
    capacity: usize,
    rank: usize,
    rank_deficient: bool,
    train_error: f64,
    gp_solver: &'static str,
    gp: crate::predictor::BiasVariance,
    fw_status: String,
    fw: Option<crate::predictor::BiasVariance>,
}

/// Training error, bias, variance and generalization error against the
/// number of gates for each depth on a noisy ReLU teacher task.
pub fn run_capacity_sweep(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let n0 = r.get("n0", 10usize)?;
    let p = r.get("p", 200usize)?;
    let p_test = r.get("p_test", 200usize)?;
    let n_teacher = r.get("n_teacher", 500usize)?;
    let gamma = r.get("gamma", 0.01)?;
    let noise = r.get("noise", 0.1)?;
    let threshold = r.get("gate_threshold", 0.0)?;
    let sigma = r.get("sigma", 1.0)?;
    let depths = r.list("depths", &[1usize, 2])?;
    let m_values = r.list("m_values", &(1..=30).collect::<Vec<usize>>())?;
    let fw_depths = r.list("fw_depths", &[1usize])?;
    let fw_width = r.get("fw_width", 100usize)?;
    let solver = solver_settings(&mut r, 1e-4)?;
    let parameters = r.finish()?;

    let seeds = Seeds::new(seed, 0);
    let data = noisy_relu_teacher(n0, p, p_test, n_teacher, gamma, noise, seeds.data)?;
    let y_test = data.y_test.as_slice();
    let k0 = crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, sigma)?);

    let mut table = Table::new(&COLUMNS);
    for &depth in &depths {
        let points: Vec<Point> = m_values
            .par_iter()
            .map(|&m| -> Result<Point> {
                let family = random_halfspace_family(n0, m, threshold, seeds.gating)?;
                let gates = family.evaluate(&data.x_train)?;
                let features = effective_features(&gates, &data.x_train, depth)?;
                let train_error = min_norm_interpolation_error(&features, &data.y_train);
                let bundle = gp_kernel(&family, &data.x_train, &data.x_test, sigma, depth)?;
                let flagged = predict_flagged(&bundle, &data.y_train)?;
                let gp = bias_variance(&flagged.stats, y_test)?;
                let (fw_status, fw) = if fw_depths.contains(&depth) {
                    match solve_order_params_deep(
                        &gates,
                        &k0,
                        &data.y_train,
                        fw_width,
                        sigma,
                        depth,
                        &solver,
                    ) {
                        Ok(ops) => {
                            let b = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
                            let stats = theory_predict(&ops, &b, &data.y_train)?;
                            let status = if ops.diagnostics.converged {
                                "ok"
                            } else {
                                "not_converged"
                            };
                            (status.to_string(), Some(bias_variance(&stats, y_test)?))
                        }
                        Err(e) => (format!("{e}").replace(',', ";"), None),
                    }
                } else {
                    ("skipped".to_string(), None)
                };
                Ok(Point {
                    capacity: capacity(n0, m, depth)?,
                    rank: flagged.rank,
                    rank_deficient: flagged.rank_deficient,
                    train_error,
                    gp_solver: if flagged.pinv { "pinv" } else { "cholesky" },
                    gp,
                    fw_status,
                    fw,
                })
            })
            .collect::<Result<_>>()?;
        let deficient: Vec<bool> = points.iter().map(|pt| pt.rank_deficient).collect();
        for ((pt, &m), at) in points
            .iter()
            .zip(&m_values)
            .zip(threshold_flags(&deficient))
        {
            table.push(row![
                depth,
                m,
                pt.capacity,
                pt.rank,
                pt.rank_deficient,
                at,
                pt.train_error,
                pt.gp_solver,
                pt.gp.bias,
                pt.gp.variance,
                pt.gp.eps_g,
                pt.fw_status.as_str(),
                pt.fw.map(|b| b.bias),
                pt.fw.map(|b| b.variance),
                pt.fw.map(|b| b.eps_g),
            ]);
        }
    }
    Ok((
        parameters,
        RunOutput {
            results: Some(table),
            kernels: Vec::new(),
        },
    ))
}
