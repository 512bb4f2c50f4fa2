//! Finite-width globally gated deep linear network.
//!
//! `x_1 = W_1 x/√N0` (no gating at the input layer), then for `l ≥ 2`
//! `x_l = c Σ_m g_m(x) W_l^m x_{l−1}`, and the readout
//! `f(x) = Σ_m g_m(x) a_mᵀ x_L/√(N·M)`. The hidden-layer constant `c` is
//! selected by [`HiddenNorm`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Normalization of the gated hidden layers `l ≥ 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenNorm {
    /// `1/√(N0·M)`.
    #[default]
    AsPrinted,
    /// `1/√(N·M)`, the width-consistent choice whose infinite-width limit
    /// is the GP kernel.
    Width,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub n_gates: usize,
    pub input_dim: usize,
    pub sigma: f64,
    #[serde(default)]
    pub hidden_norm: HiddenNorm,
}

impl Architecture {
    pub fn new(
        depth: usize,
        width: usize,
        n_gates: usize,
        input_dim: usize,
        sigma: f64,
    ) -> Result<Self> {
        if depth == 0 || width == 0 || n_gates == 0 || input_dim == 0 {
            return Err(Error::DomainError(
                "depth, width, n_gates and input_dim must be positive".into(),
            ));
        }
        if !(sigma > 0.0) {
            return Err(Error::DomainError(format!(
                "prior scale must be positive, got {sigma}"
            )));
        }
        Ok(Architecture {
            depth,
            width,
            n_gates,
            input_dim,
            sigma,
            hidden_norm: HiddenNorm::AsPrinted,
        })
    }

    pub fn with_hidden_norm(mut self, norm: HiddenNorm) -> Self {
        self.hidden_norm = norm;
        self
    }

    /// `N < M^L`: the width is below the order-parameter dimension and
    /// the finite-width theory is not expected to hold.
    pub fn outside_theory_regime(&self) -> bool {
        let ml = (self.n_gates as f64).powi(self.depth as i32);
        (self.width as f64) < ml
    }

    fn hidden_scale(&self) -> f64 {
        let fan = match self.hidden_norm {
            HiddenNorm::AsPrinted => self.input_dim,
            HiddenNorm::Width => self.width,
        };
        1.0 / ((fan * self.n_gates) as f64).sqrt()
    }

    fn readout_scale(&self) -> f64 {
        1.0 / ((self.width * self.n_gates) as f64).sqrt()
    }

    pub fn n_params(&self) -> usize {
        let n = self.width;
        n * self.input_dim + (self.depth - 1) * self.n_gates * n * n + self.n_gates * n
    }
}

/// Network weights: `w1` is `N×N0`, `hidden[l][m]` is `W_{l+2}^m` (`N×N`),
/// and row `m` of `readout` is `a_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub w1: DMatrix<f64>,
    pub hidden: Vec<Vec<DMatrix<f64>>>,
    pub readout: DMatrix<f64>,
}

fn normal_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = sd * z;
        }
    }
    m
}

/// Entries i.i.d. `N(0, σ²)`.
pub fn init_params(arch: &Architecture, seed: u64) -> Params {
    init_params_with_scale(arch, arch.sigma, seed)
}

pub(crate) fn init_params_with_scale(arch: &Architecture, sd: f64, seed: u64) -> Params {
    let mut rng = rng_from_seed(seed);
    let n = arch.width;
    let w1 = normal_matrix(n, arch.input_dim, sd, &mut rng);
    let hidden = (1..arch.depth)
        .map(|_| {
            (0..arch.n_gates)
                .map(|_| normal_matrix(n, n, sd, &mut rng))
                .collect()
        })
        .collect();
    let readout = normal_matrix(arch.n_gates, n, sd, &mut rng);
    Params {
        w1,
        hidden,
        readout,
    }
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        let n = arch.width;
        Params {
            w1: DMatrix::zeros(n, arch.input_dim),
            hidden: (1..arch.depth)
                .map(|_| vec![DMatrix::zeros(n, n); arch.n_gates])
                .collect(),
            readout: DMatrix::zeros(arch.n_gates, n),
        }
    }

    fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        std::iter::once(&self.w1)
            .chain(self.hidden.iter().flatten())
            .chain(std::iter::once(&self.readout))
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        std::iter::once(&mut self.w1)
            .chain(self.hidden.iter_mut().flatten())
            .chain(std::iter::once(&mut self.readout))
    }

    /// All entries, matrix by matrix, row-major within each matrix.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for m in self.matrices() {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter().copied());
            }
        }
        DVector::from_vec(out)
    }

    pub fn set_flat(&mut self, flat: &DVector<f64>) -> Result<()> {
        let total: usize = self.matrices().map(|m| m.len()).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        for m in self.matrices_mut() {
            let cols = m.ncols();
            for i in 0..m.nrows() {
                for j in 0..cols {
                    m[(i, j)] = flat[at];
                    at += 1;
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(|m| m.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let n = arch.width;
        let ok = self.w1.shape() == (n, arch.input_dim)
            && self.hidden.len() == arch.depth - 1
            && self
                .hidden
                .iter()
                .all(|l| l.len() == arch.n_gates && l.iter().all(|w| w.shape() == (n, n)))
            && self.readout.shape() == (arch.n_gates, n);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "parameter shapes do not match the architecture".into(),
            ))
        }
    }
}

fn check_inputs(arch: &Architecture, gates: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != arch.input_dim || gates.nrows() != arch.n_gates || gates.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "inputs {}x{} and gates {}x{} for N0 = {}, M = {}",
            x.nrows(),
            x.ncols(),
            gates.nrows(),
            gates.ncols(),
            arch.input_dim,
            arch.n_gates
        )));
    }
    Ok(())
}

fn scale_rows(m: &DMatrix<f64>, w: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, s) in w.enumerate() {
        out.row_mut(i).scale_mut(s);
    }
    out
}

/// Hidden activations `x_1..x_L`, each `P×N`.
fn activations(
    arch: &Architecture,
    params: &Params,
    gates: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let mut acts = Vec::with_capacity(arch.depth);
    acts.push(x * params.w1.transpose() / (arch.input_dim as f64).sqrt());
    let c = arch.hidden_scale();
    for layer in &params.hidden {
        let prev = acts.last().expect("first layer present");
        let mut next = DMatrix::zeros(prev.nrows(), arch.width);
        for (m, w) in layer.iter().enumerate() {
            next += scale_rows(&(prev * w.transpose()), gates.row(m).iter().copied());
        }
        acts.push(next * c);
    }
    acts
}

/// Network outputs for the rows of `x`, given the `M×P` gating matrix.
pub fn forward_gated(
    arch: &Architecture,
    params: &Params,
    gates: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_inputs(arch, gates, x)?;
    params.check_shapes(arch)?;
    let acts = activations(arch, params, gates, x);
    Ok(readout(
        arch,
        params,
        gates,
        acts.last().expect("depth >= 1"),
    ))
}

fn readout(
    arch: &Architecture,
    params: &Params,
    gates: &DMatrix<f64>,
    last: &DMatrix<f64>,
) -> DVector<f64> {
    // (x_L a_mᵀ)[μ] weighted by g_m(μ)
    let proj = last * params.readout.transpose(); // P×M
    let mut f = DVector::zeros(last.nrows());
    for mu in 0..last.nrows() {
        f[mu] = proj
            .row(mu)
            .iter()
            .zip(gates.column(mu).iter())
            .map(|(a, g)| a * g)
            .sum::<f64>();
    }
    f * arch.readout_scale()
}

pub fn forward(
    arch: &Architecture,
    params: &Params,
    family: &crate::gatings::GatingFamily,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let gates = family.evaluate(x)?;
    forward_gated(arch, params, &gates, x)
}

/// Outputs and the gradient of `½Σ_μ w_μ(f_μ − y_μ)²` with respect to
/// every parameter. Returns `(f, grad)`.
pub fn output_and_grad(
    arch: &Architecture,
    params: &Params,
    gates: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weight: f64,
) -> Result<(DVector<f64>, Params)> {
    check_inputs(arch, gates, x)?;
    params.check_shapes(arch)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(
            "label count differs from input count".into(),
        ));
    }
    let acts = activations(arch, params, gates, x);
    let last = acts.last().expect("depth >= 1");
    let f = readout(arch, params, gates, last);
    let r = (&f - y) * weight;
    let s = arch.readout_scale();

    // rg[m, μ] = r_μ g_m(μ)
    let mut rg = gates.clone();
    for mu in 0..rg.ncols() {
        rg.column_mut(mu).scale_mut(r[mu]);
    }
    let mut grad = Params::zeros(arch);
    grad.readout = &rg * last * s;
    let mut delta = rg.transpose() * &params.readout * s; // P×N

    let c = arch.hidden_scale();
    for l in (0..params.hidden.len()).rev() {
        let prev = &acts[l];
        let mut back = DMatrix::zeros(delta.nrows(), arch.width);
        for (m, w) in params.hidden[l].iter().enumerate() {
            let gd = scale_rows(&delta, gates.row(m).iter().copied());
            grad.hidden[l][m] = gd.transpose() * prev * c;
            back += gd * w * c;
        }
        delta = back;
    }
    grad.w1 = delta.transpose() * x / (arch.input_dim as f64).sqrt();
    Ok((f, grad))
}

/// `N0·C(M+L−1, L)`.
pub fn capacity(n0: usize, m: usize, l: usize) -> Result<usize> {
    let multisets = binomial(
        (m + l)
            .checked_sub(1)
            .ok_or_else(|| Error::Overflow("M + L - 1".into()))?,
        l,
    )?;
    multisets
        .checked_mul(n0)
        .ok_or_else(|| Error::Overflow(format!("capacity({n0}, {m}, {l})")))
}

pub fn binomial(n: usize, k: usize) -> Result<usize> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc·(n−k+i)/i stays integral at every step
        acc = acc
            .checked_mul(n as u128 - k as u128 + i)
            .ok_or_else(|| Error::Overflow(format!("C({n}, {k})")))?
            / i;
    }
    usize::try_from(acc).map_err(|_| Error::Overflow(format!("C({n}, {k})")))
}

/// Non-decreasing gate tuples of length `l` over `0..m`, lexicographic.
pub fn gate_multisets(m: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; l];
    if l == 0 {
        return vec![vec![]];
    }
    loop {
        out.push(cur.clone());
        // advance to the next non-decreasing tuple
        let mut i = l;
        while i > 0 && cur[i - 1] == m - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        let v = cur[i - 1];
        for c in cur.iter_mut().skip(i) {
            *c = v;
        }
    }
}

pub const FEATURE_BUDGET: usize = 10_000_000;

/// Effective inputs `x_j Π_l g_{m_l}(x)`; column `s·N0 + j` for the
/// `s`-th multiset of [`gate_multisets`].
pub fn effective_features(
    gates: &DMatrix<f64>,
    x: &DMatrix<f64>,
    l: usize,
) -> Result<DMatrix<f64>> {
    let (m, p) = gates.shape();
    let n0 = x.ncols();
    if x.nrows() != p {
        return Err(Error::DimensionMismatch(
            "gates and inputs disagree on P".into(),
        ));
    }
    let cols = capacity(n0, m, l)?;
    let entries = cols
        .checked_mul(p)
        .ok_or_else(|| Error::Overflow("feature matrix size".into()))?;
    if entries > FEATURE_BUDGET {
        return Err(Error::BudgetExceeded {
            requested: entries,
            limit: FEATURE_BUDGET,
        });
    }
    let sets = gate_multisets(m, l);
    let mut out = DMatrix::zeros(p, cols);
    for (s, set) in sets.iter().enumerate() {
        for mu in 0..p {
            let g: f64 = set.iter().map(|&k| gates[(k, mu)]).product();
            for j in 0..n0 {
                out[(mu, s * n0 + j)] = g * x[(mu, j)];
            }
        }
    }
    Ok(out)
}

/// Training MSE of the minimum-norm least-squares fit `Y ≈ F w`.
pub fn min_norm_interpolation_error(features: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let p = features.nrows();
    if p == 0 {
        return 0.0;
    }
    let svd = features.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cutoff = p.max(features.ncols()) as f64 * f64::EPSILON * smax;
    let mut fit = DVector::zeros(p);
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff {
            let col = u.column(k);
            fit += col * col.dot(y);
        }
    }
    (y - fit).norm_squared() / p as f64
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    arrays: Vec<(String, [usize; 2])>,
}

/// Binary checkpoint: little-endian `u64` header length, a JSON header
/// with the architecture and array shapes, then every entry as
/// little-endian `f64` in [`Params::to_flat`] order.
pub fn encode_checkpoint(arch: &Architecture, params: &Params) -> Result<Vec<u8>> {
    params.check_shapes(arch)?;
    let mut arrays = vec![("w1".to_string(), [params.w1.nrows(), params.w1.ncols()])];
    for (l, layer) in params.hidden.iter().enumerate() {
        for (m, w) in layer.iter().enumerate() {
            arrays.push((format!("w{}_{m}", l + 2), [w.nrows(), w.ncols()]));
        }
    }
    arrays.push(("a".into(), [params.readout.nrows(), params.readout.ncols()]));
    let header = serde_json::to_vec(&CheckpointHeader {
        architecture: *arch,
        arrays,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.to_flat().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Architecture, Params)> {
    let truncated = |expected: usize| Error::TruncatedFile {
        expected,
        found: bytes.len(),
    };
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| truncated(8))?
        .try_into()
        .expect("8 bytes");
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let header_end = 8usize
        .checked_add(hlen)
        .ok_or_else(|| Error::Overflow("checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes
            .get(8..header_end)
            .ok_or_else(|| truncated(header_end))?,
    )?;
    let arch = header.architecture;
    let mut params = Params::zeros(&arch);
    let n = arch.n_params();
    let body = &bytes[header_end..];
    if body.len() != 8 * n {
        return Err(Error::TruncatedFile {
            expected: 8 * n,
            found: body.len(),
        });
    }
    let flat = DVector::from_iterator(
        n,
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
    );
    params.set_flat(&flat)?;
    Ok((arch, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, arch: &Architecture, params: &Params) -> Result<()> {
    std::fs::write(path, encode_checkpoint(arch, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Architecture, Params)> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gatings::random_halfspace_family;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        normal_matrix(rows, cols, 1.0, &mut rng_from_seed(seed))
    }

    #[test]
    fn zero_prior_scale_gives_zero_params_and_output() {
        let arch = Architecture {
            sigma: 0.0,
            ..Architecture::new(2, 4, 3, 5, 1.0).unwrap()
        };
        let p = init_params(&arch, 1);
        assert!(p.to_flat().iter().all(|&v| v == 0.0));
        let fam = random_halfspace_family(5, 3, 0.0, 2).unwrap();
        let f = forward(&arch, &p, &fam, &gaussian(6, 5, 3)).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_variance_and_determinism() {
        let arch = Architecture::new(1, 200, 2, 60, 0.7).unwrap();
        let p = init_params(&arch, 4);
        let v = p.w1.map(|x| x * x).mean();
        let n = p.w1.len() as f64;
        // standard error of the mean of squares of N(0, σ²) is σ²√(2/n)
        let se = 0.49 * (2.0 / n).sqrt();
        assert!((v - 0.49).abs() < 3.0 * se, "{v}");
        assert_eq!(p, init_params(&arch, 4));
        assert_ne!(p, init_params(&arch, 5));
    }

    #[test]
    fn linear_network_reduction() {
        let arch = Architecture::new(1, 7, 1, 4, 1.0).unwrap();
        let params = init_params(&arch, 6);
        let x = gaussian(5, 4, 7);
        let gates = DMatrix::from_element(1, 5, 1.0);
        let f = forward_gated(&arch, &params, &gates, &x).unwrap();
        let direct = (params.readout.row(0) * &params.w1 * x.transpose()) / (7.0_f64 * 4.0).sqrt();
        for mu in 0..5 {
            assert!((f[mu] - direct[mu]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_matches_effective_weights() {
        let arch = Architecture::new(1, 6, 3, 4, 1.0).unwrap();
        let params = init_params(&arch, 8);
        let fam = random_halfspace_family(4, 3, 0.0, 9).unwrap();
        let x = gaussian(10, 4, 10);
        let g = fam.evaluate(&x).unwrap();
        let f = forward_gated(&arch, &params, &g, &x).unwrap();
        let weff = &params.readout * &params.w1 / (6.0_f64 * 4.0 * 3.0).sqrt(); // M×N0
        for mu in 0..10 {
            let mut v = 0.0;
            for m in 0..3 {
                for j in 0..4 {
                    v += weff[(m, j)] * g[(m, mu)] * x[(mu, j)];
                }
            }
            assert!((f[mu] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn two_layer_matches_effective_weights() {
        for norm in [HiddenNorm::AsPrinted, HiddenNorm::Width] {
            let arch = Architecture::new(2, 5, 3, 4, 1.0)
                .unwrap()
                .with_hidden_norm(norm);
            let params = init_params(&arch, 11);
            let x = gaussian(8, 4, 12);
            let g = gaussian(3, 8, 13);
            let f = forward_gated(&arch, &params, &g, &x).unwrap();
            let c = arch.hidden_scale();
            // f = c/√(N·M·N0) Σ_{m,n,j} [a_m W_2^n W_1]_j g_m g_n x_j
            for mu in 0..8 {
                let mut v = 0.0;
                for m in 0..3 {
                    for n in 0..3 {
                        let weff = params.readout.row(m) * &params.hidden[0][n] * &params.w1;
                        for j in 0..4 {
                            v += weff[j] * g[(m, mu)] * g[(n, mu)] * x[(mu, j)];
                        }
                    }
                }
                v *= c * arch.readout_scale() / 2.0;
                assert!((f[mu] - v).abs() < 1e-10, "{norm:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = Architecture::new(3, 3, 2, 3, 0.8).unwrap();
        let mut params = init_params(&arch, 14);
        let x = gaussian(5, 3, 15);
        let g = gaussian(2, 5, 16);
        let y = gaussian(5, 1, 17).column(0).into_owned();
        let energy = |p: &Params| {
            let f = forward_gated(&arch, p, &g, &x).unwrap();
            0.5 * 0.3 * (f - &y).norm_squared()
        };
        let (_, grad) = output_and_grad(&arch, &params, &g, &x, &y, 0.3).unwrap();
        let gflat = grad.to_flat();
        let base = params.to_flat();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            params.set_flat(&plus).unwrap();
            let ep = energy(&params);
            let mut minus = base.clone();
            minus[k] -= h;
            params.set_flat(&minus).unwrap();
            let em = energy(&params);
            let fd = (ep - em) / (2.0 * h);
            assert!(
                (fd - gflat[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {k}: {fd} vs {}",
                gflat[k]
            );
        }
    }

    #[test]
    fn capacity_values() {
        assert_eq!(capacity(7, 1, 4).unwrap(), 7);
        assert_eq!(capacity(30, 12, 2).unwrap(), 2340);
        assert_eq!(capacity(5, 4, 1).unwrap(), 20);
        assert!(matches!(
            capacity(usize::MAX / 2, 1000, 3),
            Err(Error::Overflow(_))
        ));
        assert!(matches!(binomial(400, 200), Err(Error::Overflow(_))));
    }

    #[test]
    fn multisets_are_lexicographic() {
        assert_eq!(
            gate_multisets(2, 2),
            vec![vec![0, 0], vec![0, 1], vec![1, 1]]
        );
        assert_eq!(gate_multisets(3, 1), vec![vec![0], vec![1], vec![2]]);
        for (m, l) in [(4, 3), (5, 2), (3, 4)] {
            assert_eq!(gate_multisets(m, l).len(), binomial(m + l - 1, l).unwrap());
        }
    }

    #[test]
    fn first_order_features_are_khatri_rao_rows() {
        let x = gaussian(4, 3, 18);
        let g = gaussian(2, 4, 19);
        let f = effective_features(&g, &x, 1).unwrap();
        assert_eq!(f.shape(), (4, 6));
        for mu in 0..4 {
            for m in 0..2 {
                for j in 0..3 {
                    assert_eq!(f[(mu, m * 3 + j)], g[(m, mu)] * x[(mu, j)]);
                }
            }
        }
        assert_eq!(effective_features(&g, &x, 2).unwrap().ncols(), 9);
        let big = DMatrix::zeros(30, 2000);
        assert!(matches!(
            effective_features(&big, &DMatrix::zeros(2000, 200), 2),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn feature_rank_equals_capacity() {
        for seed in 0..5 {
            for (l, cap) in [(1usize, 12usize), (2, 24)] {
                // enough points that no two gates agree on all of them
                let p = cap + 200;
                let x = gaussian(p, 4, 100 + seed);
                let fam = random_halfspace_family(4, 3, 0.0, 200 + seed).unwrap();
                let f = effective_features(&fam.evaluate(&x).unwrap(), &x, l).unwrap();
                let rank = f.clone().svd(false, false).rank(1e-9 * f.norm());
                assert_eq!(rank, cap, "seed {seed} L {l}");
            }
        }
    }

    #[test]
    fn interpolation_error_edge_cases() {
        let f = gaussian(1, 3, 20);
        assert!(min_norm_interpolation_error(&f, &DVector::from_element(1, 2.0)) < 1e-20);
        let f = gaussian(10, 4, 21);
        let y = &f * gaussian(4, 1, 22).column(0);
        assert!(min_norm_interpolation_error(&f, &y) < 1e-20);
        let y = gaussian(10, 1, 23).column(0).into_owned();
        assert!(min_norm_interpolation_error(&f, &y) > 1e-3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Architecture::new(2, 3, 2, 4, 1.0).unwrap();
        let params = init_params(&arch, 24);
        let bytes = encode_checkpoint(&arch, &params).unwrap();
        let (a2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(a2, arch);
        assert_eq!(p2, params);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
