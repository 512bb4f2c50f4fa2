use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{
    predict_flagged, solver_settings, theory_predict, DigitSource, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::{preprocess_classification, LabelRule};
use crate::error::{Error, Result};
use crate::gatings::random_halfspace_family;
use crate::gp::gp_kernel;
use crate::network::Architecture;
use crate::predictor::{bias_variance, error_rate, PredictorStats};
use crate::renorm::{renorm_kernel, solve_order_params};
use crate::row;

const COLUMNS: [&str; 9] = [
    "kind",
    "depth",
    "pairs",
    "frac_small",
    "mean_abs",
    "bias",
    "variance",
    "eps_g",
    "error_rate",
];

/// Normalized entries `K_ij/√(K_ii K_jj)` of distinct training pairs that
/// share a label. Points with a zero diagonal (all gates off) are skipped.
pub fn same_label_entries(k: &DMatrix<f64>, labels: &[f64]) -> Vec<f64> {
    let live: Vec<usize> = (0..k.nrows()).filter(|&i| k[(i, i)] > 0.0).collect();
    let mut out = Vec::new();
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            if labels[i] == labels[j] {
                out.push((k[(i, j)] / (k[(i, i)] * k[(j, j)]).sqrt()).clamp(-1.0, 1.0));
            }
        }
    }
    out
}

/// Counts of `values` in `bins` equal-width bins over `[-1, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v + 1.0) / 2.0) * bins as f64)
            .floor()
            .clamp(0.0, bins as f64 - 1.0) as usize;
        counts[b] += 1;
    }
    counts
}

/// Flattening of the GP and renormalized kernels with depth on even/odd
/// digit classification.
pub fn run_depth_sweep(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let digits = DigitSource::resolve(&mut r)?;
    let m = r.get("m", 6usize)?;
    let n = r.get("n", 500usize)?;
    let p = r.get("p", 200usize)?;
    let p_test = r.get("p_test", 400usize)?;
    let sigma = r.get("sigma", 1.0)?;
    let depths = r.list("depths", &[1usize, 2, 3])?;
    let bins = r.get("bins", 20usize)?;
    let small = r.get("small_threshold", 0.05)?;
    let solver = solver_settings(&mut r, 1e-4)?;
    let parameters = r.finish()?;
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }

    let seeds = Seeds::new(seed, 0);
    let raw = digits.load(seeds.data)?;
    let data = preprocess_classification(&raw, None, p, p_test, LabelRule::Parity, seeds.data)?;
    let family = random_halfspace_family(data.input_dim(), m, 0.0, seeds.gating)?;
    let labels = data.y_train.as_slice();
    let y_test = data.y_test.as_slice();

    let mut table = Table::new(&COLUMNS);
    let mut hist_cols = vec!["kind".to_string(), "depth".to_string()];
    hist_cols
        .extend((0..bins).map(|b| format!("{:.3}", -1.0 + 2.0 * (b as f64 + 0.5) / bins as f64)));
    let mut hist = Table::new(&hist_cols.iter().map(String::as_str).collect::<Vec<_>>());
    for &depth in &depths {
        let gp = gp_kernel(&family, &data.x_train, &data.x_test, sigma, depth)?;
        let gp_stats = predict_flagged(&gp, &data.y_train)?.stats;
        let arch = Architecture::new(depth, n, m, data.input_dim(), sigma)?;
        let ops = solve_order_params(&family, &arch, &data.x_train, &data.y_train, &solver)?;
        let rn = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
        let rn_stats = theory_predict(&ops, &rn, &data.y_train)?;
        for (kind, bundle, stats) in [("gp", &gp, &gp_stats), ("renorm", &rn, &rn_stats)] {
            let entries = same_label_entries(bundle.k_train.as_matrix(), labels);
            let frac = entries.iter().filter(|v| v.abs() <= small).count() as f64
                / entries.len().max(1) as f64;
            let mean_abs =
                entries.iter().map(|v| v.abs()).sum::<f64>() / entries.len().max(1) as f64;
            push_stats(
                &mut table,
                kind,
                depth,
                entries.len(),
                frac,
                mean_abs,
                stats,
                y_test,
            )?;
            let mut h = row![kind, depth];
            h.extend(histogram(&entries, bins).iter().map(|c| c.to_string()));
            hist.push(h);
        }
    }
    Ok((
        parameters,
        RunOutput {
            results: Some(table),
            kernels: vec![("histograms".into(), hist)],
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn push_stats(
    table: &mut Table,
    kind: &str,
    depth: usize,
    pairs: usize,
    frac: f64,
    mean_abs: f64,
    stats: &PredictorStats,
    y_test: &[f64],
) -> Result<()> {
    let bv = bias_variance(stats, y_test)?;
    table.push(row![
        kind,
        depth,
        pairs,
        frac,
        mean_abs,
        bv.bias,
        bv.variance,
        bv.eps_g,
        error_rate(stats, y_test)?.1
    ]);
    Ok(())
}
