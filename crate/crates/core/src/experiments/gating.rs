use std::collections::BTreeMap;

use super::{
    relu_baseline_train, solver_settings, theory_predict, DigitSource, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::{preprocess_classification, LabelRule};
use crate::error::{Error, Result};
use crate::gatings::{random_halfspace_family, soft_kmeans_family, GatingFamily};
use crate::gp::input_kernel;
use crate::predictor::{bias_variance, error_rate, PredictorStats};
use crate::renorm::{renorm_kernel, solve_order_params_l1};
use crate::row;
use crate::samplers::TrainConfig;

const COLUMNS: [&str; 7] = [
    "gating",
    "m",
    "n",
    "bias",
    "variance",
    "eps_g",
    "error_rate",
];

/// Random halfspace gates against soft k-means gates fitted on the
/// unlabeled training inputs, over the number of gates, with a
/// width-matched ReLU network as reference.
pub fn run_gating_compare(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let digits = DigitSource::resolve(&mut r)?;
    let p = r.get("p", 200usize)?;
    let p_test = r.get("p_test", 200usize)?;
    let sigma = r.get("sigma", 0.5)?;
    let width = r.get("width", 200usize)?;
    let m_values = r.list("m_values", &[2usize, 5, 10, 20, 40])?;
    let kmeans_iters = r.get("kmeans_iters", 30usize)?;
    let solver = solver_settings(&mut r, 1e-4)?;
    let relu = r.get("relu", true)?;
    let relu_cfg = TrainConfig {
        learning_rate: r.get("relu_learning_rate", 1.0)?,
        max_steps: r.get("relu_max_steps", 20_000usize)?,
        stop_train_mse: r.get("relu_stop_train_mse", 1e-3)?,
        n_seeds: r.get("relu_seeds", 10usize)?,
        ..TrainConfig::default()
    };
    relu_cfg.validate_gd()?;
    let parameters = r.finish()?;

    let seeds = Seeds::new(seed, 0);
    let raw = digits.load(seeds.data)?;
    let data = preprocess_classification(&raw, None, p, p_test, LabelRule::Parity, seeds.data)?;
    let y_test = data.y_test.as_slice();
    let k0 = crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, sigma)?);
    let mut table = Table::new(&COLUMNS);
    let push =
        |table: &mut Table, name: &str, m: Option<usize>, stats: &PredictorStats| -> Result<()> {
            let bv = bias_variance(stats, y_test)?;
            table.push(row![
                name,
                m,
                width,
                bv.bias,
                bv.variance,
                bv.eps_g,
                error_rate(stats, y_test)?.1
            ]);
            Ok(())
        };
    for (name, make) in [
        (
            "random",
            Box::new(|m| random_halfspace_family(data.input_dim(), m, 0.0, seeds.gating))
                as Box<dyn Fn(usize) -> Result<GatingFamily>>,
        ),
        (
            "pretrained",
            Box::new(|m| soft_kmeans_family(&data.x_train, m, kmeans_iters, seeds.gating)),
        ),
    ] {
        for &m in &m_values {
            let family = make(m)?;
            let gates = family.evaluate(&data.x_train)?;
            let ops = solve_order_params_l1(&gates, &k0, &data.y_train, width, sigma, &solver)?;
            let bundle = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
            push(
                &mut table,
                name,
                Some(m),
                &theory_predict(&ops, &bundle, &data.y_train)?,
            )?;
        }
    }
    if relu {
        match relu_baseline_train(&data, width, sigma, &relu_cfg, seeds.sampler) {
            Ok(stats) => push(&mut table, "relu", None, &stats)?,
            Err(e @ Error::NoConvergence { .. }) => log::warn!("ReLU baseline omitted: {e}"),
            Err(e) => return Err(e),
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_gated_and_relu_rows() {
        let s = Settings::parse(
            "synthetic_count=300\np=40\np_test=40\nwidth=40\nm_values=2,4\nkmeans_iters=5\nrelu_seeds=3\nrelu_stop_train_mse=1e-2",
        )
        .unwrap();
        let (_, out) = run_gating_compare(&s).unwrap();
        let t = out.results();
        assert_eq!(
            t.column("gating").unwrap(),
            vec!["random", "random", "pretrained", "pretrained", "relu"]
        );
        assert_eq!(t.column("m").unwrap()[4], "");
        assert_eq!(t.column("n").unwrap()[4], "40");
        assert!(t
            .floats("error_rate")
            .unwrap()
            .iter()
            .all(|e| (0.0..=1.0).contains(e)));
    }
}
