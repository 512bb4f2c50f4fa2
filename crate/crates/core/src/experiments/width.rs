use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{
    gd_settings, labeled_matrix, solver_settings, theory_predict, Resolver, RunOutput, Seeds,
    Settings, Table,
};
use crate::datasets::clustered_preferred_teacher;
use crate::error::{Error, Result};
use crate::gatings::localized_family;
use crate::gp::input_kernel;
use crate::network::Architecture;
use crate::predictor::{bias_variance, BiasVariance};
use crate::renorm::{renorm_kernel, solve_order_params_l1};
use crate::row;
use crate::samplers::{converged_members, ensemble_predictor_stats, gd_train};

const COLUMNS: [&str; 11] = [
    "repeat",
    "n",
    "theory_bias",
    "theory_variance",
    "theory_eps_g",
    "u_block_ratio",
    "gd_bias",
    "gd_variance",
    "gd_eps_g",
    "gd_block_ratio",
    "gd_converged",
];

/// Mean absolute entry of the first diagonal `M/m_blocks` block of `u`
/// over the mean absolute entry of the remaining diagonal blocks.
pub fn block_amplitude_ratio(u: &DMatrix<f64>, m_blocks: usize) -> Result<f64> {
    let m = u.nrows();
    if m_blocks < 2 || m % m_blocks != 0 || u.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m}x{} matrix in {m_blocks} blocks",
            u.ncols()
        )));
    }
    let b = m / m_blocks;
    let block = |k: usize| u.view((k * b, k * b), (b, b)).abs().sum() / (b * b) as f64;
    let rest = (1..m_blocks).map(block).sum::<f64>() / (m_blocks - 1) as f64;
    if rest == 0.0 {
        return Err(Error::DivisionByZero(
            "off-preferred blocks of U are zero".into(),
        ));
    }
    Ok(block(0) / rest)
}

/// Theory and gradient-descent generalization against hidden width on the
/// preferred-inputs teacher task with block-localized gates.
pub fn run_width_sweep(settings: &Settings) -> Result<(BTreeMap<String, String>, RunOutput)> {
    let mut r = Resolver::new(settings);
    let seed = r.get("seed", 0u64)?;
    let repeats = r.get("repeats", 1usize)?;
    let n0 = r.get("n0", 100usize)?;
    let n_gates = r.get("n_gates", 50usize)?;
    let m_blocks = r.get("m_blocks", 5usize)?;
    let n_clusters = r.get("n_clusters", 20usize)?;
    let gamma = r.get("gamma", 0.01)?;
    let rho = r.get("rho", 100.0)?;
    let n_teacher = r.get("n_teacher", 1000usize)?;
    let p = r.get("p", 200usize)?;
    let p_test = r.get("p_test", 500usize)?;
    let sigma = r.get("sigma", 1.0)?;
    let widths = r.list("widths", &[50usize, 200, 1000])?;
    let solver = solver_settings(&mut r, 0.0)?;
    let gd_repeats = r.get("gd_repeats", 1usize)?;
    let train = gd_settings(&mut r, 4.0 / (sigma * sigma), 20)?;
    let parameters = r.finish()?;

    let mut table = Table::new(&COLUMNS);
    let mut kernels = Vec::new();
    let labels: Vec<String> = (0..n_gates).map(|m| format!("g{m}")).collect();
    for rep in 0..repeats {
        let seeds = Seeds::new(seed, rep);
        let data = clustered_preferred_teacher(
            n0, m_blocks, n_clusters, gamma, rho, n_teacher, p, p_test, seeds.data,
        )?;
        let family = localized_family(n0, n_gates, m_blocks, seeds.gating)?;
        let gates = family.evaluate(&data.x_train)?;
        let k0 = crate::SymMatrix::symmetrized(input_kernel(&data.x_train, &data.x_train, sigma)?);
        let y_test = data.y_test.as_slice();
        for &n in &widths {
            let ops = solve_order_params_l1(&gates, &k0, &data.y_train, n, sigma, &solver)?;
            let bundle = renorm_kernel(&ops, &family, &data.x_train, &data.x_test)?;
            let theory = bias_variance(&theory_predict(&ops, &bundle, &data.y_train)?, y_test)?;
            let u = ops.u[0].as_matrix();
            let ratio = block_amplitude_ratio(u, m_blocks)?;
            kernels.push((
                format!("u1_r{rep}_n{n}"),
                labeled_matrix(u, &labels, &labels),
            ));

            let mut gd: Option<(BiasVariance, f64, usize)> = None;
            if rep < gd_repeats {
                let arch = Architecture::new(1, n, n_gates, n0, sigma)?;
                let members = gd_train(&data, &family, &arch, &train, seeds.sampler)?;
                let kept = converged_members(&members);
                if kept.len() >= 2 {
                    let stats = ensemble_predictor_stats(
                        kept.iter().copied(),
                        &family,
                        &arch,
                        &data.x_test,
                    )?;
                    let mut u_gd = DMatrix::zeros(n_gates, n_gates);
                    for params in &kept {
                        u_gd += &params.readout * params.readout.transpose() / n as f64;
                    }
                    u_gd /= kept.len() as f64;
                    gd = Some((
                        bias_variance(&stats, y_test)?,
                        block_amplitude_ratio(&u_gd, m_blocks)?,
                        kept.len(),
                    ));
                } else {
                    log::warn!(
                        "width {n}: only {} of {} GD runs converged",
                        kept.len(),
                        members.len()
                    );
                    gd = Some((
                        BiasVariance {
                            bias: f64::NAN,
                            variance: f64::NAN,
                            eps_g: f64::NAN,
                        },
                        f64::NAN,
                        kept.len(),
                    ));
                }
            }
            let gd_bv = gd.map(|g| g.0).filter(|b| b.bias.is_finite());
            table.push(row![
                rep,
                n,
                theory.bias,
                theory.variance,
                theory.eps_g,
                ratio,
                gd_bv.map(|b| b.bias),
                gd_bv.map(|b| b.variance),
                gd_bv.map(|b| b.eps_g),
                gd.map(|g| g.1).filter(|v| v.is_finite()),
                gd.map(|g| g.2),
            ]);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_ratio_of_scaled_first_block() {
        let mut u = DMatrix::<f64>::identity(6, 6);
        u.view_mut((0, 0), (2, 2)).fill(-3.0);
        assert!((block_amplitude_ratio(&u, 3).unwrap() - 6.0).abs() < 1e-12);
        assert!(block_amplitude_ratio(&u, 4).is_err());
        assert!(block_amplitude_ratio(&DMatrix::zeros(4, 4), 2).is_err());
    }

    #[test]
    fn tiny_width_sweep_has_theory_and_gd_rows() {
        let s = Settings::parse(
            "n0=20\nn_gates=10\nm_blocks=2\nn_teacher=50\np=20\np_test=30\nwidths=20,80\ngd_seeds=3\nmax_steps=3000\nstop_train_mse=1e-2",
        )
        .unwrap();
        let (params, out) = run_width_sweep(&s).unwrap();
        assert_eq!(params["rho"], "100.0");
        let t = out.results();
        assert_eq!(t.rows.len(), 2);
        assert!(t
            .floats("theory_bias")
            .unwrap()
            .iter()
            .all(|b| b.is_finite()));
        assert!(t.floats("u_block_ratio").unwrap().iter().all(|b| *b > 0.0));
        assert!(out.kernel("u1_r0_n80").is_some());
    }
}
