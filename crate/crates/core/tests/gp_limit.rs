use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use ggdln::gatings::random_halfspace_family;
use ggdln::gp::gp_kernel;
use ggdln::network::{forward, init_params, Architecture, HiddenNorm};
use ggdln::rng::{child_rng, derive_seed};

/// Empirical prior covariance of the network output at a few inputs.
fn prior_covariance(
    arch: &Architecture,
    x: &DMatrix<f64>,
    family: &ggdln::gatings::GatingFamily,
    draws: usize,
) -> DMatrix<f64> {
    let p = x.nrows();
    let mut acc = DMatrix::zeros(p, p);
    for d in 0..draws {
        let params = init_params(arch, derive_seed(77, d as u64));
        let f = forward(arch, &params, family, x).unwrap();
        acc += &f * f.transpose();
    }
    acc / draws as f64
}

#[test]
fn width_normalized_prior_matches_the_deep_gp_kernel() {
    let (n0, m, sigma) = (4, 3, 0.9);
    let mut rng = child_rng(5, 0);
    let x = DMatrix::from_fn(3, n0, |_, _| StandardNormal.sample(&mut rng));
    let family = random_halfspace_family(n0, m, -0.5, 6).unwrap();
    let gp = gp_kernel(&family, &x, &x, sigma, 2).unwrap();
    let k = gp.k_train.as_matrix();

    let width = Architecture::new(2, 100, m, n0, sigma)
        .unwrap()
        .with_hidden_norm(HiddenNorm::Width);
    let cov = prior_covariance(&width, &x, &family, 1000);
    assert!(
        (&cov - k).norm() < 0.1 * k.norm(),
        "width normalization: {cov} vs {k}"
    );

    // the printed normalization scales the depth-2 kernel by N/N0
    let printed = Architecture::new(2, 100, m, n0, sigma).unwrap();
    let cov = prior_covariance(&printed, &x, &family, 1000) * (n0 as f64 / 100.0);
    assert!(
        (&cov - k).norm() < 0.1 * k.norm(),
        "printed normalization: {cov} vs {k}"
    );
}
