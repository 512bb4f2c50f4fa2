use std::collections::BTreeMap;

use super::{
    predict_flagged, solver_settings, theory_predict, DigitSource, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::{preprocess_classification, LabelRule};
use crate::error::Result;
use crate::gatings::random_halfspace_family;
use crate::gp::{gp_kernel, input_kernel};
use crate::predictor::{bias_variance, error_rate};
use crate::renorm::{renorm_kernel, solve_order_params_l1};
use crate::row;

const COLUMNS: [&str; 13] = [
    "regime",
    "m",
    "n",
    "p",
    "sigma",
    "theory_bias",
    "theory_variance",
    "theory_eps_g",
    "theory_error_rate",
    "gp_bias",
    "gp_variance",
    "gp_eps_g",
    "gp_error_rate",
];

/// Bias, variance and error rate against the weight prior scale on
/// even/odd digit classification, for a few-gate wide regime (`a`) and a
/// many-gate narrow regime (`b`).
pub fn run_sigma_sweep(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let digits = DigitSource::resolve(&mut r)?;
    let p_test = r.get("p_test", 400usize)?;
    let sigmas = r.list("sigmas", &[0.2, 0.5, 1.0, 2.0, 4.0])?;
    let regimes = [
        (
            "a",
            r.get("a_m", 5usize)?,
            r.get("a_n", 3000usize)?,
            r.get("a_p", 200usize)?,
        ),
        (
            "b",
            r.get("b_m", 100usize)?,
            r.get("b_n", 200usize)?,
            r.get("b_p", 150usize)?,
        ),
    ];
    let solver = solver_settings(&mut r, 1e-4)?;
    let parameters = r.finish()?;

    let seeds = Seeds::new(seed, 0);
    let raw = digits.load(seeds.data)?;
    let mut table = Table::new(&COLUMNS);
    for (name, m, n, p) in regimes {
        let data = preprocess_classification(&raw, None, p, p_test, LabelRule::Parity, seeds.data)?;
        let family = random_halfspace_family(data.input_dim(), m, 0.0, seeds.gating)?;
        let gates = family.evaluate(&data.x_train)?;
        let y_test = data.y_test.as_slice();
        for &sigma in &sigmas {
            let k0 =
                crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, sigma)?);
            let ops = solve_order_params_l1(&gates, &k0, &data.y_train, n, sigma, &solver)?;
            let bundle = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
            let theory = theory_predict(&ops, &bundle, &data.y_train)?;
            let tb = bias_variance(&theory, y_test)?;
            let gp = predict_flagged(
                &gp_kernel(&family, &data.x_train, &data.x_test, sigma, 1)?,
                &data.y_train,
            )?
            .stats;
            let gb = bias_variance(&gp, y_test)?;
            table.push(row![
                name,
                m,
                n,
                p,
                sigma,
                tb.bias,
                tb.variance,
                tb.eps_g,
                error_rate(&theory, y_test)?.1,
                gb.bias,
                gb.variance,
                gb.eps_g,
                error_rate(&gp, y_test)?.1,
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
