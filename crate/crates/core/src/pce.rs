//! Total-degree polynomial chaos expansions fitted by penalized least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::LinalgError;

/// All multi-indices of a given dimension with total degree at most
/// `s_max`, in graded order; within a degree, larger leading exponents come
/// first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    k: usize,
    s_max: usize,
    indices: Vec<Vec<u32>>,
}

impl MultiIndexSet {
    pub fn total_degree(k: usize, s_max: usize) -> Result<Self, LinalgError> {
        if k == 0 {
            return Err(LinalgError::Invalid("input dimension must be at least 1".into()));
        }
        let size = binomial(s_max as u64 + k as u64, k as u64).ok_or(LinalgError::Overflow)?;
        let size = usize::try_from(size).map_err(|_| LinalgError::Overflow)?;
        let mut indices = Vec::with_capacity(size);
        let mut current = vec![0u32; k];
        for degree in 0..=s_max {
            compositions(degree as u32, 0, &mut current, &mut indices);
        }
        debug_assert_eq!(indices.len(), size);
        Ok(Self { k, s_max, indices })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn max_degree(&self) -> usize {
        self.s_max
    }

    /// Cardinality `S`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }
}

/// Every way of writing `remaining` as a sum over positions `pos..`.
fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let k = current.len();
    if pos + 1 == k {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `C(n, k)` by the multiplicative formula, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc * (n - k + i) is always divisible by i
        acc = acc.checked_mul(n as u128 - k as u128 + i)? / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Trainable coefficient count `C(s_max + d_in, d_in) * d_out`.
pub fn count_params(s_max: usize, d_in: usize, d_out: usize) -> Result<u64, LinalgError> {
    binomial(s_max as u64 + d_in as u64, d_in as u64)
        .and_then(|s| s.checked_mul(d_out as u64))
        .ok_or(LinalgError::Overflow)
}

/// Univariate orthonormal family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyFamily {
    /// Probabilists' Hermite `He_n / √(n!)`, orthonormal under N(0, 1).
    #[default]
    Hermite,
    /// `√(2n+1) P_n`, orthonormal under U(-1, 1).
    Legendre,
}

impl PolyFamily {
    /// Values of the orthonormal polynomials of degree `0..=max` at `z`.
    pub fn eval_all(self, z: f64, max: usize, out: &mut [f64]) {
        out[0] = 1.0;
        if max == 0 {
            return;
        }
        match self {
            PolyFamily::Hermite => {
                // monic recurrence He_{n+1} = z He_n - n He_{n-1}, normalized on the fly
                let (mut prev, mut cur) = (1.0, z);
                out[1] = z;
                let mut norm = 1.0f64;
                for n in 1..max {
                    let next = z * cur - n as f64 * prev;
                    prev = cur;
                    cur = next;
                    norm *= (n + 1) as f64;
                    out[n + 1] = cur / norm.sqrt();
                }
            }
            PolyFamily::Legendre => {
                let (mut prev, mut cur) = (1.0, z);
                out[1] = 3f64.sqrt() * z;
                for n in 1..max {
                    let nf = n as f64;
                    let next = ((2.0 * nf + 1.0) * z * cur - nf * prev) / (nf + 1.0);
                    prev = cur;
                    cur = next;
                    out[n + 1] = (2.0 * nf + 3.0).sqrt() * cur;
                }
            }
        }
    }
}

/// Products of univariate orthonormal polynomials over the index set.
pub fn eval_basis(set: &MultiIndexSet, family: PolyFamily, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; set.len()];
    eval_basis_into(set, family, z, &mut out);
    out
}

fn eval_basis_into(set: &MultiIndexSet, family: PolyFamily, z: &[f64], out: &mut [f64]) {
    let stride = set.s_max + 1;
    let mut table = vec![0.0; set.k * stride];
    for (i, &zi) in z.iter().enumerate() {
        family.eval_all(zi, set.s_max, &mut table[i * stride..(i + 1) * stride]);
    }
    for (o, idx) in out.iter_mut().zip(&set.indices) {
        let mut p = 1.0;
        for (i, &s) in idx.iter().enumerate() {
            if s != 0 {
                p *= table[i * stride + s as usize];
            }
        }
        *o = p;
    }
}

/// Design matrix `Ψ[i, s] = Ξ_s(z_i)`.
pub fn design_matrix(set: &MultiIndexSet, family: PolyFamily, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut psi = DMatrix::zeros(z.nrows(), set.len());
    let mut buf = vec![0.0; set.len()];
    let mut row = vec![0.0; z.ncols()];
    for i in 0..z.nrows() {
        row.iter_mut().zip(z.row(i).iter()).for_each(|(r, v)| *r = *v);
        eval_basis_into(set, family, &row, &mut buf);
        for (s, v) in buf.iter().enumerate() {
            psi[(i, s)] = *v;
        }
    }
    psi
}

/// Affine map from raw latent coordinates to the germ's support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Mean/std for Hermite, midrange/half-range for Legendre. Constant
    /// columns get scale 1.
    pub fn fit(z: &DMatrix<f64>, family: PolyFamily) -> Self {
        let n = z.nrows() as f64;
        let mut center = Vec::with_capacity(z.ncols());
        let mut scale = Vec::with_capacity(z.ncols());
        for (j, col) in z.column_iter().enumerate() {
            let (c, s) = match family {
                PolyFamily::Hermite => {
                    let m = col.sum() / n;
                    let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                    (m, var.sqrt())
                }
                PolyFamily::Legendre => {
                    let lo = col.min();
                    let hi = col.max();
                    (0.5 * (lo + hi), 0.5 * (hi - lo))
                }
            };
            let s = if s > 0.0 && s.is_finite() {
                s
            } else {
                log::warn!("PCE input column {j} has zero spread; using unit scale");
                1.0
            };
            center.push(c);
            scale.push(s);
        }
        Self { center, scale }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.center).zip(&self.scale).map(|((v, c), s)| (v - c) / s).collect()
    }

    pub fn apply_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| (z[(i, j)] - self.center[j]) / self.scale[j])
    }
}

/// How the least-squares system was solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Cholesky on `ΨᵀΨ/N + λI`.
    NormalEquations,
    /// Cholesky on `ΨΨᵀ/N + λI`, used when `S > N`.
    DualNormalEquations,
    /// SVD of `Ψ` (ordinary least squares or ill-conditioned ridge).
    Svd,
    /// Eigendecomposition of `ΨΨᵀ` (minimum-norm interpolation, `S > N`).
    DualEigen,
}

/// Condition number above which the ridge normal equations are abandoned
/// for an orthogonal decomposition.
const COND_LIMIT: f64 = 1e8;
/// Relative singular-value floor for rank decisions at zero penalty.
const RANK_TOL: f64 = 1e-10;

/// Fitted expansion `y(z) = Σ_s c_s Ξ_s((z - center) / scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PceModel {
    pub index_set: MultiIndexSet,
    pub family: PolyFamily,
    /// `S x d_out`.
    pub coeffs: DMatrix<f64>,
    pub standardization: Standardization,
    pub ridge: f64,
    pub method: SolveMethod,
}

impl PceModel {
    /// Minimize `(1/N) Σ ‖y_i - cᵀ Ξ(z_i)‖² + λ ‖c‖²` column by column.
    pub fn fit(
        z: &DMatrix<f64>,
        y: &DMatrix<f64>,
        s_max: usize,
        family: PolyFamily,
        ridge: f64,
    ) -> Result<Self, LinalgError> {
        let n = z.nrows();
        if n == 0 {
            return Err(LinalgError::Invalid("PCE needs at least one sample".into()));
        }
        if y.nrows() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: y.nrows() });
        }
        if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(LinalgError::Invalid(format!("ridge must be finite and nonnegative, got {ridge}")));
        }
        let index_set = MultiIndexSet::total_degree(z.ncols(), s_max)?;
        let standardization = Standardization::fit(z, family);
        let psi = design_matrix(&index_set, family, &standardization.apply_matrix(z));
        let (coeffs, method) = solve(&psi, y, ridge)?;
        Ok(Self { index_set, family, coeffs, standardization, ridge, method })
    }

    pub fn input_dim(&self) -> usize {
        self.index_set.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.coeffs.len()
    }

    pub fn predict(&self, z: &[f64]) -> Result<DVector<f64>, LinalgError> {
        if z.len() != self.input_dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.input_dim(), found: z.len() });
        }
        let basis = eval_basis(&self.index_set, self.family, &self.standardization.apply(z));
        Ok(self.coeffs.tr_mul(&DVector::from_vec(basis)))
    }

    pub fn predict_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        if z.ncols() != self.input_dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.input_dim(), found: z.ncols() });
        }
        let psi = design_matrix(&self.index_set, self.family, &self.standardization.apply_matrix(z));
        Ok(psi * &self.coeffs)
    }
}

fn solve(psi: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, SolveMethod), LinalgError> {
    let (n, s) = psi.shape();
    let nf = n as f64;
    if ridge == 0.0 {
        return if s <= n { svd_solve(psi, y, 0.0) } else { dual_eigen_solve(psi, y) };
    }
    if s <= n {
        let mut a = psi.tr_mul(psi) / nf;
        for i in 0..s {
            a[(i, i)] += ridge;
        }
        if let Some(chol) = a.clone().cholesky() {
            if cholesky_condition(chol.l_dirty()) <= COND_LIMIT {
                let rhs = psi.tr_mul(y) / nf;
                return Ok((chol.solve(&rhs), SolveMethod::NormalEquations));
            }
        }
        svd_solve(psi, y, ridge)
    } else {
        let mut g = psi * psi.transpose() / nf;
        for i in 0..n {
            g[(i, i)] += ridge;
        }
        if let Some(chol) = g.clone().cholesky() {
            if cholesky_condition(chol.l_dirty()) <= COND_LIMIT {
                let w = chol.solve(y) / nf;
                return Ok((psi.tr_mul(&w), SolveMethod::DualNormalEquations));
            }
        }
        svd_solve(psi, y, ridge)
    }
}

/// Squared ratio of extreme Cholesky diagonal entries, a cheap lower bound
/// on the 2-norm condition number.
fn cholesky_condition(l: &DMatrix<f64>) -> f64 {
    let d = l.diagonal();
    let (lo, hi) = (d.min(), d.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// `c = V diag(σ / (σ² + Nλ)) Uᵀ y`, i.e. ridge on `(1/N)‖Ψc - y‖²`.
fn svd_solve(psi: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, SolveMethod), LinalgError> {
    let (n, s) = psi.shape();
    let svd = psi.clone().svd(true, true);
    let sv = &svd.singular_values;
    let top = sv.max();
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let nl = n as f64 * ridge;
    if ridge == 0.0 {
        let rank = sv.iter().filter(|&&x| x > RANK_TOL * top).count();
        let needed = n.min(s);
        if rank < needed {
            return Err(LinalgError::RankDeficient { rank, needed });
        }
    }
    let uty = u.tr_mul(y);
    let mut scaled = uty;
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        let x = sv[k];
        let f = if ridge == 0.0 { 1.0 / x } else { x / (x * x + nl) };
        row *= f;
    }
    Ok((vt.tr_mul(&scaled), SolveMethod::Svd))
}

/// Minimum-norm interpolant `c = Ψᵀ (ΨΨᵀ)⁻¹ y` for `S > N`.
fn dual_eigen_solve(psi: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, SolveMethod), LinalgError> {
    let n = psi.nrows();
    let g = psi * psi.transpose();
    let eig = g.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let rank = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOL * RANK_TOL * top).count();
    if rank < n {
        return Err(LinalgError::RankDeficient { rank, needed: n });
    }
    let q = &eig.eigenvectors;
    let mut w = q.tr_mul(y);
    for (k, mut row) in w.row_iter_mut().enumerate() {
        row /= eig.eigenvalues[k];
    }
    let w = q * w;
    Ok((psi.tr_mul(&w), SolveMethod::DualEigen))
}
