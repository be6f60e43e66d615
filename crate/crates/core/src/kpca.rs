//! Kernel principal component analysis with a learned pre-image map.
//!
//! Components are scaled to unit norm in feature space: with `μ_k` the
//! eigenvalues of the centered Gram matrix `K'` and `v_k` its unit
//! eigenvectors, `α_k = v_k / √μ_k` and the training latents are
//! `z_k = K' α_k = √μ_k v_k`. Reported eigenvalues are `λ_k = μ_k / N`.
//!
//! The decoder is kernel ridge regression from latent coordinates back to
//! the ambient vectors the model was trained on.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::LinalgError;
use crate::seed;

/// Kernel family. A `gamma` of `None` is replaced by a default when the
/// kernel is first fitted: `1 / D` for poly and, for rbf, the rule in
/// [`RbfScale`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf {
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        scale: RbfScale,
    },
    Poly {
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "default_degree")]
        degree: u32,
        #[serde(default = "default_coef0")]
        coef0: f64,
    },
    Linear,
}

/// Default rbf `gamma` when none is given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbfScale {
    /// `1 / (D var(X))`, with `var` the mean per-column variance.
    #[default]
    DimVariance,
    /// `1 / D`.
    Dim,
}

fn default_degree() -> u32 {
    3
}

fn default_coef0() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn rbf() -> Self {
        KernelSpec::Rbf { gamma: None, scale: RbfScale::DimVariance }
    }

    /// Rbf with `gamma = 1 / D`.
    pub fn rbf_per_dim() -> Self {
        KernelSpec::Rbf { gamma: None, scale: RbfScale::Dim }
    }

    pub fn rbf_with(gamma: f64) -> Self {
        KernelSpec::Rbf { gamma: Some(gamma), scale: RbfScale::default() }
    }

    pub fn poly() -> Self {
        KernelSpec::Poly { gamma: None, degree: default_degree(), coef0: default_coef0() }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            KernelSpec::Rbf { gamma, .. } | KernelSpec::Poly { gamma, .. } => *gamma,
            KernelSpec::Linear => None,
        }
    }

    /// Fill in any missing scale from the data the kernel will be fitted on.
    pub fn resolve(&self, x: &DMatrix<f64>) -> Result<KernelSpec, LinalgError> {
        let d = x.ncols().max(1) as f64;
        let resolved = match self {
            KernelSpec::Rbf { gamma: None, scale } => {
                let var = match scale {
                    RbfScale::DimVariance => total_variance(x),
                    RbfScale::Dim => 1.0,
                };
                let gamma = if var > 0.0 { 1.0 / (d * var) } else { 1.0 / d };
                KernelSpec::Rbf { gamma: Some(gamma), scale: *scale }
            }
            KernelSpec::Poly { gamma: None, degree, coef0 } => {
                KernelSpec::Poly { gamma: Some(1.0 / d), degree: *degree, coef0: *coef0 }
            }
            other => other.clone(),
        };
        if let Some(g) = resolved.gamma() {
            if !(g > 0.0) || !g.is_finite() {
                return Err(LinalgError::Invalid(format!("kernel gamma must be positive, got {g}")));
            }
        }
        Ok(resolved)
    }

    /// Kernel value from a dot product and the two squared norms.
    #[inline]
    fn from_dot(&self, dot: f64, na: f64, nb: f64) -> f64 {
        match self {
            KernelSpec::Rbf { gamma, .. } => {
                let d2 = (na + nb - 2.0 * dot).max(0.0);
                (-gamma.expect("resolved kernel") * d2).exp()
            }
            KernelSpec::Poly { gamma, degree, coef0 } => {
                (gamma.expect("resolved kernel") * dot + coef0).powi(*degree as i32)
            }
            KernelSpec::Linear => dot,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum();
        let nb = b.iter().map(|x| x * x).sum();
        self.from_dot(dot, na, nb)
    }
}

/// Variance of all entries around their per-column means.
fn total_variance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for col in x.column_iter() {
        let m = col.mean();
        acc += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    acc / (n * x.ncols()) as f64
}

fn row_sq_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm_squared()).collect()
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, kernel: &KernelSpec) -> DMatrix<f64> {
    let dots = a * b.transpose();
    let na = row_sq_norms(a);
    let nb = row_sq_norms(b);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| kernel.from_dot(dots[(i, j)], na[i], nb[j]))
}

/// Symmetric kernel matrix of the rows of `x`. `kernel` must be resolved.
pub fn gram(x: &DMatrix<f64>, kernel: &KernelSpec) -> DMatrix<f64> {
    let mut k = cross_gram(x, x, kernel);
    let n = k.nrows();
    for i in 0..n {
        if matches!(kernel, KernelSpec::Rbf { .. }) {
            k[(i, i)] = 1.0;
        }
        for j in 0..i {
            let s = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = s;
            k[(j, i)] = s;
        }
    }
    k
}

/// Double centering `K - 1K - K1 + 1K1` with `1` the matrix of `1/N`.
pub fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (row_means, total) = centering_stats(k);
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - row_means[i] - row_means[j] + total)
}

fn centering_stats(k: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let n = k.nrows() as f64;
    let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n).collect();
    let total = row_means.iter().sum::<f64>() / n;
    (row_means, total)
}

/// Relative eigenvalue floor below which components count as rank-deficient.
const RANK_TOL: f64 = 1e-10;

/// Full spectral factorization of a centered Gram matrix. Models of any
/// latent dimension are cheap truncations of it.
#[derive(Clone, Debug)]
pub struct KpcaFactorization {
    train: Arc<DMatrix<f64>>,
    kernel: KernelSpec,
    /// `μ_k` for the numerically nonzero part of the spectrum, descending.
    mu: Vec<f64>,
    vectors: DMatrix<f64>,
    /// Full spectrum `λ = μ / N`, clamped at zero.
    spectrum: Vec<f64>,
    row_means: Vec<f64>,
    total_mean: f64,
}

impl KpcaFactorization {
    pub fn new(x: Arc<DMatrix<f64>>, kernel: &KernelSpec) -> Result<Self, LinalgError> {
        let n = x.nrows();
        if n < 2 {
            return Err(LinalgError::Invalid(format!("kernel PCA needs at least 2 points, got {n}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let kernel = kernel.resolve(&x)?;
        let k = gram(&x, &kernel);
        let (row_means, total_mean) = centering_stats(&k);
        let kc = center(&k);
        let eig = kc.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0) / n as f64).collect();
        let top = eig.eigenvalues[order[0]];
        let rank = if top > 0.0 {
            order.iter().take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * top).count()
        } else {
            0
        };
        let mu: Vec<f64> = order[..rank].iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(n, rank);
        for (c, &i) in order[..rank].iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            vectors.set_column(c, &v);
        }
        Ok(Self { train: x, kernel, mu, vectors, spectrum, row_means, total_mean })
    }

    pub fn rank(&self) -> usize {
        self.mu.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn training_points(&self) -> &Arc<DMatrix<f64>> {
        &self.train
    }

    /// Model keeping the leading `d` components, shrunk to the numerical
    /// rank if necessary.
    pub fn truncate(&self, d: usize) -> Result<KpcaModel, LinalgError> {
        if d == 0 {
            return Err(LinalgError::Invalid("latent dimension must be positive".into()));
        }
        let n = self.train.nrows();
        if d > n {
            return Err(LinalgError::Invalid(format!("latent dimension {d} exceeds {n} samples")));
        }
        let rank = d.min(self.rank());
        if rank < d {
            log::warn!("kernel PCA: requested {d} components but numerical rank is {rank}; shrinking");
        }
        // identical points in feature space embed as one constant coordinate
        let kept = rank.max(1);
        let mut alphas = DMatrix::zeros(n, kept);
        let mut latents = DMatrix::zeros(n, kept);
        for k in 0..rank {
            let s = self.mu[k].sqrt();
            alphas.set_column(k, &(self.vectors.column(k) / s));
            latents.set_column(k, &(self.vectors.column(k) * s));
        }
        Ok(KpcaModel {
            train: Arc::clone(&self.train),
            kernel: self.kernel.clone(),
            alphas,
            lambdas: (0..kept).map(|k| self.mu.get(k).map_or(0.0, |m| m / n as f64)).collect(),
            requested_d: d,
            row_means: self.row_means.clone(),
            total_mean: self.total_mean,
            train_latents: latents,
            inverse: None,
        })
    }
}

/// Fitted kernel PCA projection.
#[derive(Clone, Debug)]
pub struct KpcaModel {
    pub(crate) train: Arc<DMatrix<f64>>,
    pub(crate) kernel: KernelSpec,
    /// `N x d`, column `k` is `α_k`.
    pub(crate) alphas: DMatrix<f64>,
    pub(crate) lambdas: Vec<f64>,
    pub(crate) requested_d: usize,
    pub(crate) row_means: Vec<f64>,
    pub(crate) total_mean: f64,
    pub(crate) train_latents: DMatrix<f64>,
    pub(crate) inverse: Option<InverseMap>,
}

impl KpcaModel {
    pub fn fit(x: &DMatrix<f64>, kernel: &KernelSpec, d: usize) -> Result<Self, LinalgError> {
        KpcaFactorization::new(Arc::new(x.clone()), kernel)?.truncate(d)
    }

    /// Retained latent dimension.
    pub fn d(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn requested_d(&self) -> usize {
        self.requested_d
    }

    /// Ambient dimension.
    pub fn input_dim(&self) -> usize {
        self.train.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.train.nrows()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn alphas(&self) -> &DMatrix<f64> {
        &self.alphas
    }

    /// Latent coordinates of the training points, `N x d`.
    pub fn training_latents(&self) -> &DMatrix<f64> {
        &self.train_latents
    }

    pub fn inverse(&self) -> Option<&InverseMap> {
        self.inverse.as_ref()
    }

    /// Project every row of `x`.
    pub fn transform_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        if x.ncols() != self.input_dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        let mut k = cross_gram(x, &self.train, &self.kernel);
        let n = self.n_train() as f64;
        for mut row in k.row_iter_mut() {
            let mean = row.sum() / n;
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.total_mean - mean - self.row_means[j];
            }
        }
        Ok(k * &self.alphas)
    }

    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>, LinalgError> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.transform_batch(&row)?.row(0).transpose())
    }

    /// Train the decoder on the ambient vectors this model was fitted on and
    /// attach it. Returns the mean relative training reconstruction error.
    pub fn fit_inverse(&mut self, spec: &InverseSpec) -> Result<f64, LinalgError> {
        let spec = InverseSpec { kernel: Some(spec.kernel.clone().unwrap_or_else(|| self.kernel.clone())), ..spec.clone() };
        let inv = InverseMap::fit(&self.train_latents, &self.train, &spec)?;
        let err = inv.train_reconstruction;
        self.inverse = Some(inv);
        Ok(err)
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<DVector<f64>, LinalgError> {
        let inv = self
            .inverse
            .as_ref()
            .ok_or_else(|| LinalgError::Invalid("no inverse map fitted".into()))?;
        let row = DMatrix::from_row_slice(1, z.len(), z);
        Ok(inv.apply(&row)?.row(0).transpose())
    }

    pub fn inverse_transform_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        self.inverse
            .as_ref()
            .ok_or_else(|| LinalgError::Invalid("no inverse map fitted".into()))?
            .apply(z)
    }
}

/// Decoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseSpec {
    /// Kernel on the latent space; `None` reuses the forward kernel with its
    /// fitted parameters.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    pub ridge: f64,
    /// Regress on mean-removed targets and add the mean back.
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_center() -> bool {
    true
}

impl Default for InverseSpec {
    fn default() -> Self {
        Self { kernel: Some(KernelSpec::rbf()), ridge: 1e-3, center: true }
    }
}

impl InverseSpec {
    pub fn with_kernel(kernel: KernelSpec, ridge: f64) -> Self {
        Self { kernel: Some(kernel), ridge, center: true }
    }
}

/// Kernel ridge regression from latent vectors to ambient vectors,
/// `y(z) = ȳ + k(z, Z)ᵀ (K_Z + r I)⁻¹ (Y - ȳ)`.
#[derive(Clone, Debug)]
pub struct InverseMap {
    pub(crate) latents: DMatrix<f64>,
    pub(crate) kernel: KernelSpec,
    pub(crate) ridge: f64,
    pub(crate) mean: DVector<f64>,
    pub(crate) coefficients: DMatrix<f64>,
    pub(crate) train_reconstruction: f64,
}

impl InverseMap {
    pub fn fit(z: &DMatrix<f64>, y: &DMatrix<f64>, spec: &InverseSpec) -> Result<Self, LinalgError> {
        if z.nrows() != y.nrows() {
            return Err(LinalgError::DimensionMismatch { expected: z.nrows(), found: y.nrows() });
        }
        if !(spec.ridge >= 0.0) {
            return Err(LinalgError::Invalid("ridge must be nonnegative".into()));
        }
        let kernel = spec.kernel.as_ref().ok_or_else(|| LinalgError::Invalid("decoder kernel unset".into()))?.resolve(z)?;
        let n = z.nrows();
        let mean = if spec.center { y.row_mean().transpose() } else { DVector::zeros(y.ncols()) };
        let mut centered = y.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut kz = gram(z, &kernel);
        for i in 0..n {
            kz[(i, i)] += spec.ridge;
        }
        let chol = kz.clone().cholesky().ok_or_else(|| {
            LinalgError::IllConditioned(format!("latent Gram is not positive definite at ridge {}", spec.ridge))
        })?;
        let coefficients = chol.inverse() * &centered;
        if spec.ridge == 0.0 {
            let scale = centered.norm().max(f64::MIN_POSITIVE);
            let resid = (&kz * &coefficients - &centered).norm() / scale;
            if !(resid < 1e-6) {
                return Err(LinalgError::IllConditioned(format!("interpolation residual {resid:.2e}")));
            }
        }
        let mut map = Self {
            latents: z.clone(),
            kernel,
            ridge: spec.ridge,
            mean,
            coefficients,
            train_reconstruction: 0.0,
        };
        let recon = map.apply(z)?;
        map.train_reconstruction = mean_relative_error(&recon, y);
        Ok(map)
    }

    pub fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        if z.ncols() != self.latents.ncols() {
            return Err(LinalgError::DimensionMismatch { expected: self.latents.ncols(), found: z.ncols() });
        }
        let k = cross_gram(z, &self.latents, &self.kernel);
        let mut out = k * &self.coefficients;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }

    /// Mean relative L2 reconstruction error on the training set.
    pub fn train_reconstruction(&self) -> f64 {
        self.train_reconstruction
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Mean over rows of `‖pred_i - truth_i‖ / ‖truth_i‖`; rows with zero norm
/// contribute their absolute error.
pub fn mean_relative_error(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let n = truth.nrows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let t = truth.row(i);
            let e = (pred.row(i) - t).norm();
            let s = t.norm();
            if s > 0.0 {
                e / s
            } else {
                e
            }
        })
        .sum();
    total / n as f64
}

/// Score of one kernel candidate in [`grid_search`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelScore {
    pub kernel: KernelSpec,
    pub holdout_reconstruction: f64,
}

/// Choose the kernel that minimizes held-out reconstruction error
/// `‖x - φ⁻¹(φ(x))‖ / ‖x‖`. The rows of `x` are shuffled with `seed`, the
/// last `holdout` fraction is held out, and every candidate is fitted on the
/// rest.
pub fn grid_search(
    x: &DMatrix<f64>,
    candidates: &[KernelSpec],
    d: usize,
    inverse: &InverseSpec,
    holdout: f64,
    seed: u64,
) -> Result<(KernelSpec, Vec<KernelScore>), LinalgError> {
    if candidates.is_empty() {
        return Err(LinalgError::Invalid("empty candidate list".into()));
    }
    let n = x.nrows();
    let n_val = ((n as f64 * holdout).round() as usize).clamp(1, n.saturating_sub(2));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let (fit_idx, val_idx) = idx.split_at(n - n_val);
    let fit_x = x.select_rows(fit_idx);
    let val_x = x.select_rows(val_idx);
    let train = Arc::new(fit_x);
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut model = KpcaFactorization::new(Arc::clone(&train), cand)?.truncate(d)?;
        model.fit_inverse(inverse)?;
        let z = model.transform_batch(&val_x)?;
        let back = model.inverse_transform_batch(&z)?;
        scores.push(KernelScore {
            kernel: model.kernel.clone(),
            holdout_reconstruction: mean_relative_error(&back, &val_x),
        });
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.holdout_reconstruction.total_cmp(&b.holdout_reconstruction))
        .map(|s| s.kernel.clone())
        .expect("nonempty");
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Classical PCA scores of the mean-centered data via SVD.
    fn pca_scores(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
        let mut xc = x.clone();
        let mean = x.row_mean();
        for mut r in xc.row_iter_mut() {
            r -= &mean;
        }
        let svd = xc.clone().svd(false, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let vt = svd.v_t.unwrap();
        let mut scores = DMatrix::zeros(x.nrows(), d);
        for (c, &k) in order.iter().take(d).enumerate() {
            let v = vt.row(k).transpose();
            scores.set_column(c, &(&xc * v));
        }
        scores
    }

    #[test]
    fn gram_examples() {
        let x = random_matrix(6, 3, 1);
        let k = gram(&x, &KernelSpec::rbf().resolve(&x).unwrap());
        assert!((0..6).all(|i| k[(i, i)] == 1.0));
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_eq!(gram(&eye, &KernelSpec::Linear), eye);
        let poly = KernelSpec::Poly { gamma: Some(1.0), degree: 2, coef0: 0.0 };
        assert_eq!(poly.eval(&[1.0, 1.0], &[2.0, 0.0]), 4.0);
        let pair = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 0.0]);
        assert_eq!(gram(&pair, &poly)[(0, 1)], 4.0);
    }

    #[test]
    fn default_gammas() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        // per-column variance is 1, D = 2
        assert_eq!(KernelSpec::rbf().resolve(&x).unwrap().gamma(), Some(0.5));
        assert_eq!(KernelSpec::poly().resolve(&x).unwrap().gamma(), Some(0.5));
        let y = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 0.0, 0.0, 4.0, 4.0, 4.0, 4.0]);
        assert_eq!(KernelSpec::rbf().resolve(&y).unwrap().gamma(), Some(1.0 / 16.0));
        assert_eq!(KernelSpec::rbf_per_dim().resolve(&y).unwrap().gamma(), Some(0.25));
        assert!(KernelSpec::rbf_with(-1.0).resolve(&x).is_err());
    }

    #[test]
    fn centering_examples() {
        let ones = DMatrix::from_element(5, 5, 1.0);
        assert!(center(&ones).amax() < 1e-15);

        let a = random_matrix(5, 5, 3);
        let k = &a + a.transpose();
        let h = DMatrix::<f64>::identity(5, 5) - DMatrix::from_element(5, 5, 0.2);
        let oracle = &h * &k * &h;
        assert!((center(&k) - &oracle).amax() <= 1e-12);
        // already centered input is unchanged
        assert!((center(&oracle) - &oracle).amax() <= 1e-12);
    }

    #[test]
    fn linear_kernel_is_pca() {
        let x = random_matrix(50, 10, 11);
        let model = KpcaModel::fit(&x, &KernelSpec::Linear, 6).unwrap();
        let pca = pca_scores(&x, 6);
        for k in 0..6 {
            let a = model.training_latents().column(k);
            let b = pca.column(k);
            let sign = if a.dot(&b) < 0.0 { -1.0 } else { 1.0 };
            assert!((a - b * sign).amax() < 1e-8);
        }
    }

    #[test]
    fn unit_feature_norm_convention() {
        let x = random_matrix(30, 4, 5);
        let model = KpcaModel::fit(&x, &KernelSpec::rbf(), 8).unwrap();
        let n = 30.0;
        for (k, l) in model.lambdas().iter().enumerate() {
            let a = model.alphas().column(k);
            assert!((n * l * a.dot(&a) - 1.0).abs() < 1e-6);
        }
        assert!(model.lambdas().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transform_is_consistent_in_sample() {
        let x = random_matrix(20, 5, 2);
        for kernel in [KernelSpec::rbf(), KernelSpec::poly(), KernelSpec::Linear] {
            let model = KpcaModel::fit(&x, &kernel, 4).unwrap();
            let z = model.transform_batch(&x).unwrap();
            assert!((z - model.training_latents()).amax() < 1e-8);
            let a = model.transform(x.row(3).transpose().as_slice()).unwrap();
            let b = model.transform(x.row(3).transpose().as_slice()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tiny_gamma_collapses_latents() {
        let x = random_matrix(12, 3, 4);
        let model = KpcaModel::fit(&x, &KernelSpec::rbf_with(1e-12), 2).unwrap();
        let z = model.transform_batch(&random_matrix(5, 3, 9)).unwrap();
        assert!(z.amax() < 1e-4, "{}", z.amax());
    }

    #[test]
    fn linear_kernel_is_linear_out_of_sample() {
        let x = random_matrix(15, 4, 6);
        let model = KpcaModel::fit(&x, &KernelSpec::Linear, 3).unwrap();
        let mid: Vec<f64> = (0..4).map(|j| 0.5 * (x[(2, j)] + x[(7, j)])).collect();
        let z = model.transform(&mid).unwrap();
        let expected = (model.training_latents().row(2) + model.training_latents().row(7)) * 0.5;
        assert!((z.transpose() - expected).amax() < 1e-8);
    }

    #[test]
    fn rank_deficiency_shrinks_d() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
        let model = KpcaModel::fit(&x, &KernelSpec::Linear, 2).unwrap();
        assert_eq!(model.d(), 1);
        assert_eq!(model.requested_d(), 2);
        assert!(KpcaModel::fit(&x, &KernelSpec::Linear, 4).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let x = random_matrix(8, 3, 1);
        let model = KpcaModel::fit(&x, &KernelSpec::rbf(), 2).unwrap();
        assert!(model.transform(&[1.0, 2.0]).is_err());
        assert!(model.inverse_transform(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn lossless_linear_inverse() {
        let x = random_matrix(12, 5, 8);
        let mut model = KpcaModel::fit(&x, &KernelSpec::Linear, 5).unwrap();
        let err = model.fit_inverse(&InverseSpec::with_kernel(KernelSpec::rbf(), 0.0)).unwrap();
        assert!(err < 1e-6, "{err}");
        for i in 0..12 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let back = model.inverse_transform(model.transform(&xi).unwrap().as_slice()).unwrap();
            let rel = (back - DVector::from_vec(xi.clone())).norm() / DVector::from_vec(xi).norm();
            assert!(rel < 1e-6, "{rel}");
        }
    }

    #[test]
    fn singular_inverse_is_signalled() {
        let x = random_matrix(10, 4, 8);
        let mut model = KpcaModel::fit(&x, &KernelSpec::Linear, 2).unwrap();
        // a linear latent kernel of rank 2 cannot interpolate 10 points
        let err = model.fit_inverse(&InverseSpec::with_kernel(KernelSpec::Linear, 0.0));
        assert!(matches!(err, Err(LinalgError::IllConditioned(_))));
    }

    #[test]
    fn grid_search_prefers_better_kernel() {
        // points on a noisy circle: a narrow rbf reconstructs, a huge-gamma rbf cannot
        let mut rng = seed::rng(4);
        let x = DMatrix::from_fn(60, 2, |i, j| {
            let t = i as f64 * 0.1;
            let base = if j == 0 { t.cos() } else { t.sin() };
            base + 0.01 * rng.random_range(-1.0..1.0)
        });
        let cands = [KernelSpec::rbf_with(0.5), KernelSpec::rbf_with(1e4)];
        let (best, scores) = grid_search(&x, &cands, 2, &InverseSpec::default(), 0.2, 1).unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(best, KernelSpec::rbf_with(0.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn centered_rows_sum_to_zero(seed in any::<u64>(), n in 2usize..20) {
            let x = random_matrix(n, 3, seed);
            let k = gram(&x, &KernelSpec::poly().resolve(&x).unwrap());
            let kc = center(&k);
            let tol = 1e-8 * n as f64 * k.amax();
            for r in kc.row_iter() {
                prop_assert!(r.sum().abs() <= tol);
            }
        }

        #[test]
        fn latent_geometry_is_permutation_invariant(seed in any::<u64>()) {
            let x = random_matrix(14, 3, seed);
            let mut perm: Vec<usize> = (0..14).collect();
            perm.shuffle(&mut seed::rng(seed ^ 1));
            let xp = x.select_rows(&perm);
            let kernel = KernelSpec::rbf_with(0.7);
            // keep the full numerical rank so degenerate trailing pairs cannot matter
            let a = KpcaModel::fit(&x, &kernel, 13).unwrap();
            let b = KpcaModel::fit(&xp, &kernel, 13).unwrap();
            let za = a.training_latents();
            let zb = b.training_latents();
            for i in 0..14 {
                for j in 0..i {
                    let da = (za.row(perm[i]) - za.row(perm[j])).norm();
                    let db = (zb.row(i) - zb.row(j)).norm();
                    prop_assert!((da - db).abs() < 1e-8);
                }
            }
        }
    }
}
