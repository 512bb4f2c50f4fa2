use std::collections::BTreeMap;

use super::{
    labeled_matrix, solver_settings, theory_predict, DigitSource, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::{
    conflicting_label_tasks, permuted_tasks, preprocess_classification, Dataset, LabelRule,
};
use crate::error::Result;
use crate::gatings::{masked_family, random_halfspace_family};
use crate::gp::input_kernel;
use crate::multitask::{
    block_ratio, decorrelation_ratio, task_correlation_matrix, task_gates, topdown_task_kernel,
    Decorrelation,
};
use crate::predictor::{bias_variance, error_rate, PredictorStats};
use crate::renorm::{renorm_kernel, solve_order_params_l1, SolverConfig};
use crate::rng::derive_seed;
use crate::row;

const COLUMNS: [&str; 11] = [
    "setup",
    "sweep",
    "repeat",
    "n",
    "threshold",
    "ratio",
    "off_diagonal_zero",
    "error_rate",
    "bias",
    "variance",
    "eps_g",
];

fn push(
    table: &mut Table,
    key: (&str, &str, usize, usize, Option<f64>),
    dec: &Decorrelation,
    stats: &PredictorStats,
    y_test: &[f64],
) -> Result<()> {
    let bv = bias_variance(stats, y_test)?;
    let (setup, sweep, rep, n, threshold) = key;
    table.push(row![
        setup,
        sweep,
        rep,
        n,
        threshold,
        dec.ratio,
        dec.off_diagonal_zero,
        error_rate(stats, y_test)?.1,
        bv.bias,
        bv.variance,
        bv.eps_g,
    ]);
    Ok(())
}

fn task_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|t| format!("{prefix}{t}")).collect()
}

/// One permuted-task point: renormalized kernel at width `n` with gate
/// threshold `b`.
fn permuted_point(
    data: &Dataset,
    m: usize,
    b: f64,
    n: usize,
    sigma: f64,
    gating_seed: u64,
    solver: &SolverConfig,
) -> Result<(crate::multitask::TaskCorrelation, PredictorStats)> {
    let family = random_halfspace_family(data.input_dim(), m, b, gating_seed)?;
    let gates = family.evaluate(&data.x_train)?;
    let k0 = crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, sigma)?);
    let ops = solve_order_params_l1(&gates, &k0, &data.y_train, n, sigma, solver)?;
    let bundle = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
    let tc = task_correlation_matrix(&bundle, &data.task_train, &data.task_test, data.n_tasks)?;
    Ok((tc, theory_predict(&ops, &bundle, &data.y_train)?))
}

/// Task decorrelation with width and gate threshold on permuted parity
/// tasks with shared bottom-up gates, and the block structure of the
/// top-down gated kernel on two conflicting-label tasks.
pub fn run_multitask(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let repeats = r.get("repeats", 1usize)?;
    let digits = DigitSource::resolve(&mut r)?;
    let widths = r.list("widths", &[50usize, 200, 1000])?;
    let n_perms = r.get("perm_tasks", 2usize)?;
    let perm_m = r.get("perm_m", 50usize)?;
    let perm_p = r.get("perm_p", 100usize)?;
    let perm_p_test = r.get("perm_p_test", 200usize)?;
    let perm_b = r.get("perm_threshold", -2.0)?;
    let perm_sigma = r.get("perm_sigma", 0.2)?;
    let thresholds = r.list("thresholds", &[-3.0, -2.0, -1.0, 0.0])?;
    let threshold_width = r.get("threshold_width", 1000usize)?;
    let td_n0 = r.get("td_n0", 100usize)?;
    let td_m = r.get("td_m", 20usize)?;
    let td_p = r.get("td_p", 200usize)?;
    let td_p_test = r.get("td_p_test", 200usize)?;
    let td_permit = r.get("td_permit", 0.75)?;
    let td_sigma = r.get("td_sigma", 1.5)?;
    let td_temperature = r.get("td_temperature", 0.01)?;
    let dump = r.get("dump_kernels", true)?;
    let solver = solver_settings(&mut r, 0.0)?;
    let parameters = r.finish()?;
    let td_solver = SolverConfig {
        temperature: td_temperature,
        ..solver.clone()
    };

    let mut table = Table::new(&COLUMNS);
    let mut kernels = Vec::new();
    for rep in 0..repeats {
        let seeds = Seeds::new(seed, rep);
        let raw = digits.load(seeds.data)?;
        let dump = dump && rep == 0;

        let base = preprocess_classification(
            &raw,
            None,
            perm_p,
            perm_p_test,
            LabelRule::Parity,
            seeds.data,
        )?;
        let data = permuted_tasks(&base, n_perms, derive_seed(seeds.data, 1))?;
        let y_test = data.y_test.as_slice();
        let labels = task_labels("task", data.n_tasks);
        for &n in &widths {
            let (tc, stats) =
                permuted_point(&data, perm_m, perm_b, n, perm_sigma, seeds.gating, &solver)?;
            push(
                &mut table,
                ("permuted", "width", rep, n, Some(perm_b)),
                &decorrelation_ratio(&tc)?,
                &stats,
                y_test,
            )?;
            if dump {
                kernels.push((
                    format!("c_permuted_n{n}"),
                    labeled_matrix(&tc.c, &labels, &labels),
                ));
            }
        }
        for &b in &thresholds {
            let (tc, stats) = permuted_point(
                &data,
                perm_m,
                b,
                threshold_width,
                perm_sigma,
                seeds.gating,
                &solver,
            )?;
            let key = ("permuted", "threshold", rep, threshold_width, Some(b));
            push(&mut table, key, &decorrelation_ratio(&tc)?, &stats, y_test)?;
        }

        let base = preprocess_classification(
            &raw,
            Some(td_n0),
            td_p,
            td_p_test,
            LabelRule::Pair { neg: 0, pos: 1 },
            seeds.data,
        )?;
        let data = conflicting_label_tasks(&base, derive_seed(seeds.data, 2))?;
        let y_test = data.y_test.as_slice();
        let shared = random_halfspace_family(td_n0, td_m, 0.0, seeds.gating)?;
        let families = masked_family(
            &shared,
            td_permit,
            data.n_tasks,
            derive_seed(seeds.gating, 1),
        )?;
        let gates = task_gates(&families, &data.x_train, &data.task_train)?;
        let k0 =
            crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, td_sigma)?);
        let point_labels: Vec<String> = data
            .task_train
            .iter()
            .enumerate()
            .map(|(i, t)| format!("t{t}_{i}"))
            .collect();
        for &n in &widths {
            let ops = solve_order_params_l1(&gates, &k0, &data.y_train, n, td_sigma, &td_solver)?;
            let bundle = topdown_task_kernel(
                &ops,
                &families,
                &data.x_train,
                &data.task_train,
                &data.x_test,
                &data.task_test,
            )?;
            let dec = block_ratio(bundle.k_train.as_matrix(), &data.task_train)?;
            let stats = theory_predict(&ops, &bundle, &data.y_train)?;
            push(
                &mut table,
                ("topdown", "width", rep, n, None),
                &dec,
                &stats,
                y_test,
            )?;
            if dump {
                kernels.push((
                    format!("k_topdown_n{n}"),
                    labeled_matrix(bundle.k_train.as_matrix(), &point_labels, &point_labels),
                ));
            }
        }
    }
    Ok((
        parameters,
        RunOutput {
            results: Some(table),
            kernels,
        },
    ))
}
