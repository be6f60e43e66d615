//! Gaussian random fields on a grid from a truncated discrete
//! Karhunen-Loève expansion of the squared-exponential covariance.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LinalgError;
use crate::model::{Grid2D, Regime, ScalarField};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KleConfig {
    pub l_x: f64,
    pub l_y: f64,
    pub sigma2: f64,
    /// Smallest retained share of the total variance.
    #[serde(default = "default_energy")]
    pub energy_fraction: f64,
    #[serde(default = "default_max_modes")]
    pub max_modes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_energy() -> f64 {
    0.99
}

fn default_max_modes() -> usize {
    usize::MAX
}

/// Which random-field parameter set of a regime to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSet {
    Train,
    Ood1,
    Ood2,
}

impl KleConfig {
    pub fn new(l_x: f64, l_y: f64, sigma2: f64) -> Self {
        Self {
            l_x,
            l_y,
            sigma2,
            energy_fraction: default_energy(),
            max_modes: default_max_modes(),
            seed: 0,
        }
    }

    /// Length scales and variance for each regime and data split.
    pub fn preset(regime: Regime, set: FieldSet) -> Self {
        let (lx, ly, s2) = match (regime, set) {
            (Regime::I, FieldSet::Train) => (0.11, 0.15, 0.15),
            (Regime::I, FieldSet::Ood1) => (0.09, 0.20, 0.18),
            (Regime::I, FieldSet::Ood2) => (0.35, 0.20, 0.15),
            (Regime::II, FieldSet::Train) => (0.35, 0.20, 0.15),
            (Regime::II, FieldSet::Ood1) => (0.25, 0.15, 0.15),
            (Regime::II, FieldSet::Ood2) => (0.45, 0.40, 0.15),
        };
        Self::new(lx, ly, s2)
    }

    pub fn validate(&self) -> Result<(), LinalgError> {
        if !(self.l_x > 0.0 && self.l_y > 0.0) {
            return Err(LinalgError::Invalid("correlation lengths must be positive".into()));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(LinalgError::Invalid("variance must be nonnegative".into()));
        }
        if !(self.energy_fraction > 0.0 && self.energy_fraction <= 1.0) {
            return Err(LinalgError::Invalid("energy fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Covariance of all node pairs,
/// `σ² exp(-(x-x')²/(2ℓx²) - (y-y')²/(2ℓy²))`.
pub fn build_covariance(grid: &Grid2D, cfg: &KleConfig) -> DMatrix<f64> {
    let pts = grid.points();
    let n = pts.len();
    let (ax, ay) = (0.5 / (cfg.l_x * cfg.l_x), 0.5 / (cfg.l_y * cfg.l_y));
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = cfg.sigma2;
        for j in 0..i {
            let dx = pts[i].0 - pts[j].0;
            let dy = pts[i].1 - pts[j].1;
            let c = cfg.sigma2 * (-ax * dx * dx - ay * dy * dy).exp();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    cov
}

/// Truncated eigen-representation of a grid covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct KleModel {
    pub grid: Grid2D,
    /// Full spectrum, descending and nonnegative.
    pub eigenvalues: Vec<f64>,
    /// Retained modes, one orthonormal column each (`n_nodes x modes`).
    pub modes: DMatrix<f64>,
}

impl KleModel {
    /// Retained mode count `M`.
    pub fn truncation(&self) -> usize {
        self.modes.ncols()
    }

    /// Share of the total variance captured by the retained modes.
    pub fn captured_energy(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.eigenvalues[..self.truncation()].iter().sum::<f64>() / total
    }

    /// Covariance of the truncated expansion, `Φ Λ Φᵀ`.
    pub fn truncated_covariance(&self) -> DMatrix<f64> {
        let scaled = self.scaled_modes();
        &scaled * scaled.transpose()
    }

    fn scaled_modes(&self) -> DMatrix<f64> {
        let mut scaled = self.modes.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.eigenvalues[k].sqrt();
        }
        scaled
    }

    /// `n` realizations `h = Σ √λᵢ ξᵢ φᵢ`. Sample `i` draws its standard
    /// normals from `ChaCha8Rng` seeded with `seed::derive(rng_seed, i)`.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Vec<ScalarField> {
        let scaled = self.scaled_modes();
        let m = self.truncation();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng(seed::derive(rng_seed, i as u64));
                let xi = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
                let h = &scaled * xi;
                ScalarField::new(self.grid, h.as_slice().to_vec())
                    .expect("finite combination of finite modes")
            })
            .collect()
    }
}

/// Eigendecomposition with descending order, negative round-off clamped to
/// zero and truncation at the smallest `M` reaching `energy_fraction`.
pub fn decompose(grid: &Grid2D, cov: &DMatrix<f64>, cfg: &KleConfig) -> Result<KleModel, LinalgError> {
    cfg.validate()?;
    let n = cov.nrows();
    if cov.ncols() != n || n != grid.len() {
        return Err(LinalgError::DimensionMismatch { expected: grid.len(), found: n });
    }
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let eig = cov.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();

    let total: f64 = eigenvalues.iter().sum();
    let mut m = 0;
    if total > 0.0 {
        let mut acc = 0.0;
        for (k, &l) in eigenvalues.iter().enumerate() {
            acc += l;
            if acc >= cfg.energy_fraction * total * (1.0 - 1e-12) {
                m = k + 1;
                break;
            }
        }
        if m == 0 {
            m = n;
        }
    }
    let m = m.min(cfg.max_modes).max(usize::from(total > 0.0 && cfg.max_modes > 0));
    let mut modes = DMatrix::zeros(n, m);
    for (c, &k) in order.iter().take(m).enumerate() {
        modes.set_column(c, &eig.eigenvectors.column(k));
    }
    Ok(KleModel { grid: *grid, eigenvalues, modes })
}

/// Covariance assembly and decomposition in one call.
pub fn fit(grid: &Grid2D, cfg: &KleConfig) -> Result<KleModel, LinalgError> {
    decompose(grid, &build_covariance(grid, cfg), cfg)
}
