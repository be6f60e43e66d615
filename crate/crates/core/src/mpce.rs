//! The dual-embedding surrogate: kernel PCA on the input fields, kernel PCA
//! with a learned decoder on the flattened trajectories, and a polynomial
//! chaos expansion between the two latent spaces.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LinalgError, ModelError, Result};
use crate::kpca::{mean_relative_error, InverseSpec, KernelSpec, KpcaFactorization, KpcaModel};
use crate::model::{Dataset, Grid2D, Regime, ScalarField, Trajectory};
use crate::pce::{count_params, PceModel, PolyFamily};

/// How the outputs are represented for the regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Kernel PCA with a learned inverse.
    #[default]
    Kpca,
    /// Regress the flattened trajectories directly (input-only reduction).
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpceConfig {
    pub d_in: usize,
    /// Ignored in [`OutputMode::Identity`], where the output dimension is the
    /// ambient one.
    pub d_out: usize,
    pub input_kernel: KernelSpec,
    pub output_kernel: KernelSpec,
    pub s_max: usize,
    pub ridge: f64,
    #[serde(default)]
    pub family: PolyFamily,
    #[serde(default)]
    pub inverse: InverseSpec,
    #[serde(default)]
    pub output_mode: OutputMode,
    /// Scale every grid node to zero mean and unit variance before the input
    /// reduction.
    #[serde(default)]
    pub standardize_inputs: bool,
}

/// Ridge used by the presets.
pub const PRESET_RIDGE: f64 = 1e-6;

impl MpceConfig {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            input_kernel: KernelSpec::rbf_per_dim(),
            output_kernel: KernelSpec::poly(),
            s_max: 2,
            ridge: PRESET_RIDGE,
            family: PolyFamily::Hermite,
            inverse: InverseSpec::default(),
            output_mode: OutputMode::Kpca,
            standardize_inputs: false,
        }
    }

    /// Under-parameterized preset.
    pub fn u_mpce(regime: Regime) -> Self {
        match regime {
            Regime::I => Self::new(18, 20),
            Regime::II => Self::new(25, 40),
        }
    }

    /// Over-parameterized preset.
    pub fn o_mpce(regime: Regime) -> Self {
        match regime {
            Regime::I => Self::new(30, 45),
            Regime::II => Self::new(23, 105),
        }
    }

    /// Trainable PCE coefficients, `C(s_max + d_in, d_in) * d_out`.
    pub fn n_params(&self) -> Result<u64> {
        Ok(count_params(self.s_max, self.d_in, self.d_out)?)
    }

    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || (self.output_mode == OutputMode::Kpca && self.d_out == 0) {
            return Err(Error::Config("latent dimensions must be at least 1".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config(format!("ridge must be finite and nonnegative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Per-node affine scaling of the input fields.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NodeScaling {
    /// Column means and population standard deviations; constant nodes get
    /// unit scale.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }
}

/// Output side of a fitted surrogate.
#[derive(Clone, Debug)]
pub enum OutputReduction {
    Kpca(KpcaModel),
    Identity,
}

/// Provenance and diagnostics recorded at fit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub n_train: usize,
    pub seed: Option<u64>,
    pub dataset_hash: String,
    /// Mean relative decoder error on the training outputs (fraction).
    pub output_reconstruction: f64,
    /// Mean relative end-to-end error on the training set (fraction).
    pub train_error: f64,
    pub fit_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct MpceSurrogate {
    pub(crate) config: MpceConfig,
    pub(crate) input_scaling: Option<NodeScaling>,
    pub(crate) input_kpca: KpcaModel,
    pub(crate) output: OutputReduction,
    pub(crate) pce: PceModel,
    pub(crate) grid: Grid2D,
    pub(crate) times: Vec<f64>,
    pub(crate) info: TrainingInfo,
}

/// Full-spectrum factorizations of a training set's inputs and outputs.
/// Surrogates that differ only in latent dimensions, degree, ridge or
/// polynomial family can be fitted from one instance.
#[derive(Clone, Debug)]
pub struct Factorizations {
    pub input: Arc<KpcaFactorization>,
    pub output: Option<Arc<KpcaFactorization>>,
    input_scaling: Option<NodeScaling>,
    dataset_hash: String,
}

impl Factorizations {
    pub fn new(train: &Dataset, cfg: &MpceConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let mut x = train.input_matrix();
        let input_scaling = cfg.standardize_inputs.then(|| NodeScaling::fit(&x));
        if let Some(s) = &input_scaling {
            x = s.apply(&x);
        }
        let output = match cfg.output_mode {
            OutputMode::Kpca => {
                Some(Arc::new(KpcaFactorization::new(Arc::new(train.output_matrix()), &cfg.output_kernel)?))
            }
            OutputMode::Identity => None,
        };
        Ok(Self {
            input: Arc::new(KpcaFactorization::new(Arc::new(x), &cfg.input_kernel)?),
            output,
            input_scaling,
            dataset_hash: crate::io::dataset_hash(train),
        })
    }

    /// Whether surrogates with `cfg` can be fitted from these factorizations.
    pub fn compatible(&self, cfg: &MpceConfig) -> Result<bool> {
        let same = |spec: &KernelSpec, fact: &KpcaFactorization| -> Result<bool> {
            Ok(&spec.resolve(fact.training_points())? == fact.kernel())
        };
        let output_ok = match (cfg.output_mode, &self.output) {
            (OutputMode::Kpca, Some(f)) => same(&cfg.output_kernel, f)?,
            (OutputMode::Kpca, None) => false,
            (OutputMode::Identity, _) => true,
        };
        Ok(output_ok
            && cfg.standardize_inputs == self.input_scaling.is_some()
            && same(&cfg.input_kernel, &self.input)?)
    }
}

impl MpceSurrogate {
    pub fn fit(train: &Dataset, cfg: &MpceConfig) -> Result<Self> {
        cfg.validate()?;
        let shared = Factorizations::new(train, cfg)?;
        Self::fit_parts(train, cfg, &shared)
    }

    /// Fit from factorizations computed on exactly this training set.
    pub fn fit_shared(train: &Dataset, cfg: &MpceConfig, shared: &Factorizations) -> Result<Self> {
        cfg.validate()?;
        if !shared.compatible(cfg)? {
            return Err(Error::Config("configuration differs from the shared factorizations".into()));
        }
        if crate::io::dataset_hash(train) != shared.dataset_hash {
            return Err(Error::Config("shared factorizations belong to a different training set".into()));
        }
        Self::fit_parts(train, cfg, shared)
    }

    fn fit_parts(
        train: &Dataset,
        cfg: &MpceConfig,
        shared: &Factorizations,
    ) -> Result<Self> {
        let start = std::time::Instant::now();
        let n = train.n_fields();
        let check = |d: usize, what: &str| {
            if d > n {
                Err(Error::Config(format!("{what} = {d} exceeds the {n} training fields")))
            } else {
                Ok(())
            }
        };
        check(cfg.d_in, "d_in")?;
        let input_kpca = shared.input.truncate(cfg.d_in)?;
        let y = train.output_matrix();
        let (output, targets, output_reconstruction) = match cfg.output_mode {
            OutputMode::Kpca => {
                check(cfg.d_out, "d_out")?;
                let fact = shared.output.as_ref().ok_or_else(|| Error::Config("missing output factorization".into()))?;
                let mut kpca = fact.truncate(cfg.d_out)?;
                let recon = kpca.fit_inverse(&cfg.inverse)?;
                let z = kpca.training_latents().clone();
                (OutputReduction::Kpca(kpca), z, recon)
            }
            OutputMode::Identity => (OutputReduction::Identity, y.clone(), 0.0),
        };
        let pce = PceModel::fit(input_kpca.training_latents(), &targets, cfg.s_max, cfg.family, cfg.ridge)?;
        let grid = *train.grid().expect("nonempty");
        let mut model = Self {
            config: cfg.clone(),
            input_scaling: shared.input_scaling.clone(),
            input_kpca,
            output,
            pce,
            grid,
            times: train.times().to_vec(),
            info: TrainingInfo {
                n_train: n,
                seed: train.generation.as_ref().map(|g| g.seed),
                dataset_hash: shared.dataset_hash.clone(),
                output_reconstruction,
                train_error: 0.0,
                fit_seconds: 0.0,
            },
        };
        let pred = model.decode(&model.pce.predict_batch(model.input_kpca.training_latents())?)?;
        model.info.train_error = mean_relative_error(&pred, &y);
        model.info.fit_seconds = start.elapsed().as_secs_f64();
        log::debug!(
            "m-PCE fit: N={n}, d_in={}, d_out={}, recon={:.4}, train={:.4}, {:.2}s",
            model.d_in(),
            model.d_out(),
            output_reconstruction,
            model.info.train_error,
            model.info.fit_seconds
        );
        Ok(model)
    }

    fn decode(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        match &self.output {
            OutputReduction::Kpca(k) => k.inverse_transform_batch(latents),
            OutputReduction::Identity => Ok(latents.clone()),
        }
    }

    pub fn config(&self) -> &MpceConfig {
        &self.config
    }

    pub fn info(&self) -> &TrainingInfo {
        &self.info
    }

    pub fn input_scaling(&self) -> Option<&NodeScaling> {
        self.input_scaling.as_ref()
    }

    pub fn input_kpca(&self) -> &KpcaModel {
        &self.input_kpca
    }

    pub fn output_reduction(&self) -> &OutputReduction {
        &self.output
    }

    pub fn pce(&self) -> &PceModel {
        &self.pce
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Retained input latent dimension.
    pub fn d_in(&self) -> usize {
        self.input_kpca.d()
    }

    /// Retained output latent dimension (ambient size for identity outputs).
    pub fn d_out(&self) -> usize {
        self.pce.output_dim()
    }

    /// Fitted PCE coefficient count.
    pub fn n_params(&self) -> usize {
        self.pce.n_params()
    }

    /// Flattened predictions for an `n x (nx*ny)` matrix of inputs.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = match &self.input_scaling {
            Some(s) => {
                if x.ncols() != s.mean.len() {
                    return Err(LinalgError::DimensionMismatch { expected: s.mean.len(), found: x.ncols() }.into());
                }
                self.input_kpca.transform_batch(&s.apply(x))?
            }
            None => self.input_kpca.transform_batch(x)?,
        };
        Ok(self.decode(&self.pce.predict_batch(&z)?)?)
    }

    pub fn predict(&self, h2: &ScalarField) -> Result<Trajectory> {
        Ok(self.predict_batch(std::slice::from_ref(h2))?.pop().expect("one prediction"))
    }

    pub fn predict_batch(&self, inputs: &[ScalarField]) -> Result<Vec<Trajectory>> {
        if inputs.iter().any(|f| f.grid() != &self.grid) {
            return Err(ModelError::GridMismatch.into());
        }
        let d = self.grid.len();
        let x = DMatrix::from_fn(inputs.len(), d, |i, j| inputs[i].values()[j]);
        let y = self.predict_matrix(&x)?;
        inputs
            .iter()
            .enumerate()
            .map(|(i, h2)| {
                let row: Vec<f64> = y.row(i).iter().copied().collect();
                Ok(Trajectory::unflatten(h2.clone(), &row, self.times.clone())?)
            })
            .collect()
    }

    /// Predictions for every input of a dataset, with the dataset's label.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let inputs: Vec<ScalarField> = ds.trajectories.iter().map(|t| t.input().clone()).collect();
        let trajectories = self.predict_batch(&inputs)?;
        Ok(Dataset::new(ds.case_label.clone(), trajectories, None)?)
    }
}
