//! Experiment configuration and the comparison, parameter-sweep and
//! dataset-size runners.
//!
//! Every trial draws its training set from a shared pool of trajectories:
//! trial `t` shuffles the pool with `seed::derive(seed::derive_named(seed,
//! "trial"), t)` and keeps a prefix, so training sets of different sizes
//! within one trial are nested.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data;
use super::metrics::{add_input_noise, mean_relative_l2};
use super::report::{EvalReport, EvalRow};
use crate::error::{Error, Result};
use crate::grf::FieldSet;
use crate::io;
use crate::model::{Boundary, Dataset, Grid2D, Regime, ScalarField, Scheme};
use crate::mpce::{Factorizations, MpceConfig, MpceSurrogate};
use crate::seed;

/// Which inputs receive noise in the robustness protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// Perturb the test inputs of a model trained on clean data.
    #[default]
    Test,
    /// Train on perturbed inputs and score on the clean test set.
    Train,
}

/// A named model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub config: MpceConfig,
}

/// Latent dimensions and degree of one parameter-sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub d_in: usize,
    pub d_out: usize,
    pub s_max: usize,
}

impl GridPoint {
    pub const fn new(d_in: usize, d_out: usize, s_max: usize) -> Self {
        Self { d_in, d_out, s_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub case: Regime,
    #[serde(default = "default_n_train")]
    pub n_train_fields: usize,
    /// Size of the pool trials draw from; defaults to 1.25 times the largest
    /// training set.
    #[serde(default)]
    pub pool_fields: Option<usize>,
    #[serde(default = "default_n_eval")]
    pub n_test_fields: usize,
    #[serde(default = "default_n_eval")]
    pub n_ood_fields: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_noise")]
    pub noise_levels: Vec<f64>,
    #[serde(default)]
    pub noise_target: NoiseTarget,
    /// Preset or custom model names compared by [`run_comparison`] and
    /// [`sweep_dataset_size`]. The comparison also runs every custom model.
    #[serde(default = "default_presets")]
    pub presets: Vec<String>,
    #[serde(default)]
    pub custom_models: Vec<ModelSpec>,
    /// Model whose kernels, ridge and family the parameter sweep varies.
    #[serde(default = "default_sweep_model")]
    pub sweep_model: String,
    #[serde(default = "default_param_grid")]
    pub param_grid: Vec<GridPoint>,
    #[serde(default = "default_sizes")]
    pub dataset_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: Grid2D,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub clip_negative: bool,
    /// Directory where generated datasets are cached between runs.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_n_train() -> usize {
    800
}

fn default_n_eval() -> usize {
    200
}

fn default_trials() -> usize {
    5
}

fn default_noise() -> Vec<f64> {
    vec![0.1]
}

fn default_presets() -> Vec<String> {
    vec!["u-mpce".into(), "o-mpce".into()]
}

fn default_sweep_model() -> String {
    "o-mpce".into()
}

/// Sweep grid spanning under- to heavily over-parameterized models; it
/// contains both presets of the first regime.
pub fn default_param_grid() -> Vec<GridPoint> {
    vec![
        GridPoint::new(8, 10, 2),
        GridPoint::new(18, 20, 2),
        GridPoint::new(24, 30, 2),
        GridPoint::new(30, 45, 2),
        GridPoint::new(36, 60, 2),
        GridPoint::new(45, 80, 2),
        GridPoint::new(30, 45, 3),
        GridPoint::new(40, 80, 3),
    ]
}

fn default_sizes() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600]
}

impl ExperimentConfig {
    pub fn new(case: Regime) -> Self {
        Self {
            name: default_name(),
            case,
            n_train_fields: default_n_train(),
            pool_fields: None,
            n_test_fields: default_n_eval(),
            n_ood_fields: default_n_eval(),
            trials: default_trials(),
            noise_levels: default_noise(),
            noise_target: NoiseTarget::default(),
            presets: default_presets(),
            custom_models: Vec::new(),
            sweep_model: default_sweep_model(),
            param_grid: default_param_grid(),
            dataset_sizes: default_sizes(),
            seed: 0,
            grid: Grid2D::default(),
            scheme: Scheme::default(),
            boundary: Boundary::default(),
            clip_negative: false,
            data_dir: None,
        }
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

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| crate::error::IoError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(r) = self.noise_levels.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("noise ratios must be nonnegative, got {r}")));
        }
        if self.n_train_fields == 0 || self.dataset_sizes.contains(&0) {
            return Err(Error::Config("training sets must be nonempty".into()));
        }
        if self.n_test_fields == 0 {
            return Err(Error::Config("the test set must be nonempty".into()));
        }
        if self.pool_fields() < self.largest_train() {
            return Err(Error::Config(format!(
                "pool of {} fields is smaller than the largest training set {}",
                self.pool_fields(),
                self.largest_train()
            )));
        }
        for name in self.presets.iter().chain(std::iter::once(&self.sweep_model)) {
            self.model(name)?;
        }
        Ok(())
    }

    fn largest_train(&self) -> usize {
        self.dataset_sizes.iter().copied().chain(std::iter::once(self.n_train_fields)).max().unwrap_or(0)
    }

    pub fn pool_fields(&self) -> usize {
        self.pool_fields.unwrap_or_else(|| (self.largest_train() as f64 * 1.25).ceil() as usize)
    }

    /// Resolve a preset or custom model name.
    pub fn model(&self, name: &str) -> Result<ModelSpec> {
        if let Some(m) = self.custom_models.iter().find(|m| m.name == name) {
            return Ok(m.clone());
        }
        let config = match name {
            "u-mpce" => MpceConfig::u_mpce(self.case),
            "o-mpce" => MpceConfig::o_mpce(self.case),
            other => return Err(Error::Config(format!("unknown model {other:?}"))),
        };
        Ok(ModelSpec { name: name.into(), config })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn generation(&self, set: FieldSet, stream: &str) -> crate::model::GenerationConfig {
        let mut g = data::preset_config(self.case, set, seed::derive_named(self.seed, stream));
        g.solver.scheme = self.scheme;
        g.solver.boundary = self.boundary;
        g.clip_negative = self.clip_negative;
        g
    }
}

/// Training pool and evaluation sets of one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub pool: Dataset,
    pub test: Dataset,
    pub ood1: Dataset,
    pub ood2: Dataset,
}

impl ExperimentData {
    /// Generate every set, or read it from `cfg.data_dir` when a cached copy
    /// with the same generation settings and size exists.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let make = |set: FieldSet, stream: &str, n: usize| -> Result<Dataset> {
            let gen = cfg.generation(set, stream);
            let label = data::preset_label(cfg.case, set);
            let cache = cfg.data_dir.as_ref().map(|d| d.join(stream));
            if let Some(dir) = &cache {
                if dir.join(io::MANIFEST).exists() {
                    match io::read_dataset(dir) {
                        Ok(ds) if ds.generation.as_ref() == Some(&gen) && ds.n_fields() == n && ds.grid() == Some(&cfg.grid) => {
                            log::info!("reusing cached {stream} set in {}", dir.display());
                            return Ok(ds);
                        }
                        Ok(_) => log::info!("cached {stream} set in {} is stale; regenerating", dir.display()),
                        Err(e) => log::warn!("ignoring unreadable cache {}: {e}", dir.display()),
                    }
                }
            }
            let start = Instant::now();
            let ds = data::generate(label, cfg.grid, &gen, n)?;
            log::info!("generated {n} {stream} trajectories in {:.1}s", start.elapsed().as_secs_f64());
            if let Some(dir) = &cache {
                io::write_dataset(&ds, dir)?;
            }
            Ok(ds)
        };
        Ok(Self {
            pool: make(FieldSet::Train, "pool", cfg.pool_fields())?,
            test: make(FieldSet::Train, "test", cfg.n_test_fields)?,
            ood1: make(FieldSet::Ood1, "ood1", cfg.n_ood_fields)?,
            ood2: make(FieldSet::Ood2, "ood2", cfg.n_ood_fields)?,
        })
    }
}

/// Pool order of trial `trial`; its first `n` entries form the training set.
pub fn trial_permutation(cfg: &ExperimentConfig, pool_len: usize, trial: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool_len).collect();
    let s = seed::derive(seed::derive_named(cfg.seed, "trial"), trial as u64);
    idx.shuffle(&mut seed::rng(s));
    idx
}

fn training_set(cfg: &ExperimentConfig, pool: &Dataset, trial: usize, n: usize) -> Result<Dataset> {
    if n > pool.n_fields() {
        return Err(Error::Config(format!("training set of {n} exceeds the pool of {}", pool.n_fields())));
    }
    let perm = trial_permutation(cfg, pool.n_fields(), trial);
    Ok(pool.select(&perm[..n]))
}

/// An evaluation set with its provenance hash.
struct EvalSet {
    name: String,
    noise: f64,
    data: Dataset,
    hash: String,
}

impl EvalSet {
    fn new(name: impl Into<String>, noise: f64, data: Dataset) -> Self {
        let hash = io::dataset_hash(&data);
        Self { name: name.into(), noise, data, hash }
    }
}

fn noisy(ds: &Dataset, rho: f64, seed: u64) -> Result<Dataset> {
    let inputs: Vec<ScalarField> = ds.trajectories.iter().map(|t| t.input().clone()).collect();
    Ok(ds.with_inputs(add_input_noise(&inputs, rho, seed)?)?)
}

fn noise_seed(cfg: &ExperimentConfig, level: usize, trial: usize) -> u64 {
    seed::derive(seed::derive(seed::derive_named(cfg.seed, "noise"), level as u64), trial as u64)
}

fn score(model: &MpceSurrogate, set: &Dataset) -> Result<f64> {
    let pred = model.predict_matrix(&set.input_matrix())?;
    mean_relative_l2(&pred, &set.output_matrix())
}

/// Outcome of one fit scored on several sets.
struct TrialOutcome {
    errors: Result<Vec<f64>, String>,
    fit_seconds: f64,
    train_hash: String,
}

/// Fit `models` on `train` (sharing factorizations between compatible
/// configurations) and score each on every set.
fn fit_and_score(train: &Dataset, models: &[MpceConfig], sets: &[&Dataset]) -> Vec<TrialOutcome> {
    let train_hash = io::dataset_hash(train);
    let mut shared: Vec<Factorizations> = Vec::new();
    models
        .iter()
        .map(|cfg| {
            let start = Instant::now();
            let result = (|| -> Result<Vec<f64>> {
                let pos = match shared.iter().position(|f| f.compatible(cfg).unwrap_or(false)) {
                    Some(p) => p,
                    None => {
                        shared.push(Factorizations::new(train, cfg)?);
                        shared.len() - 1
                    }
                };
                let model = MpceSurrogate::fit_shared(train, cfg, &shared[pos])?;
                sets.iter().map(|s| score(&model, s)).collect()
            })();
            if let Err(e) = &result {
                log::warn!("trial failed: {e}");
            }
            TrialOutcome {
                errors: result.map_err(|e| e.to_string()),
                fit_seconds: start.elapsed().as_secs_f64(),
                train_hash: train_hash.clone(),
            }
        })
        .collect()
}

struct RowKey<'a> {
    experiment: &'a str,
    model: String,
    config: &'a MpceConfig,
    n_train_fields: usize,
    nt: usize,
}

fn empty_row(key: &RowKey<'_>, set: &EvalSet, config_hash: &str) -> EvalRow {
    let n_params = key.config.n_params().unwrap_or(u64::MAX);
    let n_train_points = key.n_train_fields * key.nt;
    EvalRow {
        experiment: key.experiment.into(),
        model: key.model.clone(),
        d_in: key.config.d_in,
        d_out: key.config.d_out,
        s_max: key.config.s_max,
        n_params,
        n_train_fields: key.n_train_fields,
        n_train_points,
        over_parameterized: n_params > n_train_points as u64,
        eval_set: set.name.clone(),
        noise: set.noise,
        mean: f64::NAN,
        std: f64::NAN,
        trial_errors: Vec::new(),
        failures: Vec::new(),
        fit_seconds: 0.0,
        config_hash: config_hash.into(),
        train_hashes: Vec::new(),
        eval_hash: set.hash.clone(),
    }
}

/// Fold per-trial outcomes of one model into one row per evaluation set.
fn collect_rows(key: &RowKey<'_>, sets: &[&EvalSet], outcomes: &[&TrialOutcome], config_hash: &str) -> Vec<EvalRow> {
    let mut rows: Vec<EvalRow> = sets.iter().map(|s| empty_row(key, s, config_hash)).collect();
    for (trial, o) in outcomes.iter().enumerate() {
        for (k, row) in rows.iter_mut().enumerate() {
            row.train_hashes.push(o.train_hash.clone());
            row.fit_seconds += o.fit_seconds / outcomes.len() as f64;
            match &o.errors {
                Ok(errs) => row.trial_errors.push(errs[k]),
                Err(e) => row.failures.push(format!("trial {trial}: {e}")),
            }
        }
    }
    for row in &mut rows {
        row.aggregate();
    }
    rows
}

fn noise_note(cfg: &ExperimentConfig) -> String {
    let target = match cfg.noise_target {
        NoiseTarget::Test => "test inputs",
        NoiseTarget::Train => "training inputs",
    };
    format!(
        "noise: i.i.d. Gaussian on {target}, std = ratio x std of all input values of the perturbed set; errors are means of per-sample relative L2 (%)"
    )
}

/// Every configured model on the test, OOD and noisy sets, `trials` times.
pub fn run_comparison(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<EvalReport> {
    cfg.validate()?;
    let models: Vec<ModelSpec> = cfg
        .presets
        .iter()
        .map(|p| cfg.model(p))
        .chain(cfg.custom_models.iter().filter(|m| !cfg.presets.contains(&m.name)).cloned().map(Ok))
        .collect::<Result<_>>()?;
    let configs: Vec<MpceConfig> = models.iter().map(|m| m.config.clone()).collect();
    let config_hash = cfg.hash();
    let clean = [
        EvalSet::new("test", 0.0, data.test.clone()),
        EvalSet::new("ood1", 0.0, data.ood1.clone()),
        EvalSet::new("ood2", 0.0, data.ood2.clone()),
    ];

    // per trial: outcomes[model] for the clean sets, then per noise level
    let per_trial: Vec<Result<(Vec<TrialOutcome>, Vec<(Vec<EvalSet>, Vec<TrialOutcome>)>)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let train = training_set(cfg, &data.pool, trial, cfg.n_train_fields)?;
            let mut sets: Vec<&Dataset> = clean.iter().map(|s| &s.data).collect();
            let mut noisy_tests = Vec::new();
            if cfg.noise_target == NoiseTarget::Test {
                for (k, &rho) in cfg.noise_levels.iter().enumerate() {
                    noisy_tests.push(EvalSet::new(
                        format!("test+noise{}", pct(rho)),
                        rho,
                        noisy(&data.test, rho, noise_seed(cfg, k, trial))?,
                    ));
                }
                sets.extend(noisy_tests.iter().map(|s| &s.data));
            }
            let outcomes = fit_and_score(&train, &configs, &sets);
            let mut extra = Vec::new();
            if cfg.noise_target == NoiseTarget::Test {
                extra.push((noisy_tests, Vec::new()));
            } else {
                for (k, &rho) in cfg.noise_levels.iter().enumerate() {
                    let noisy_train = noisy(&train, rho, noise_seed(cfg, k, trial))?;
                    let set = EvalSet::new(format!("test|train-noise{}", pct(rho)), rho, data.test.clone());
                    let o = fit_and_score(&noisy_train, &configs, &[&data.test]);
                    extra.push((vec![set], o));
                }
            }
            Ok((outcomes, extra))
        })
        .collect();
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;

    let mut report = EvalReport { rows: Vec::new(), notes: vec![noise_note(cfg)] };
    let nt = data.pool.nt();
    for (m, spec) in models.iter().enumerate() {
        let key = RowKey {
            experiment: "compare",
            model: spec.name.clone(),
            config: &spec.config,
            n_train_fields: cfg.n_train_fields,
            nt,
        };
        // clean and test-noise sets share one fit per trial
        let mut sets: Vec<&EvalSet> = clean.iter().collect();
        if cfg.noise_target == NoiseTarget::Test {
            sets.extend(per_trial[0].1[0].0.iter());
        }
        let outcomes: Vec<&TrialOutcome> = per_trial.iter().map(|(o, _)| &o[m]).collect();
        let mut rows = collect_rows(&key, &sets, &outcomes, &config_hash);
        if cfg.noise_target == NoiseTarget::Test {
            // noisy inputs differ per trial; record the first trial's hash
            for row in rows.iter_mut().skip(clean.len()) {
                row.eval_hash = format!("{} (trial 0)", row.eval_hash);
            }
        } else {
            for level in 0..cfg.noise_levels.len() {
                let set = &per_trial[0].1[level].0[0];
                let outs: Vec<&TrialOutcome> = per_trial.iter().map(|(_, e)| &e[level].1[m]).collect();
                rows.extend(collect_rows(&key, &[set], &outs, &config_hash));
            }
        }
        report.rows.extend(rows);
    }
    Ok(report)
}

fn pct(rho: f64) -> String {
    format!("{}%", (rho * 100.0 * 1e6).round() / 1e6)
}

/// Sweep `(d_in, d_out, s_max)` over `cfg.param_grid` on top of
/// `cfg.sweep_model`, scoring test and OOD₁ error.
pub fn sweep_parameters(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<EvalReport> {
    cfg.validate()?;
    if cfg.param_grid.is_empty() {
        return Err(Error::Config("empty parameter grid".into()));
    }
    let base = cfg.model(&cfg.sweep_model)?;
    let configs: Vec<MpceConfig> = cfg
        .param_grid
        .iter()
        .map(|p| MpceConfig { d_in: p.d_in, d_out: p.d_out, s_max: p.s_max, ..base.config.clone() })
        .collect();
    let sets = [EvalSet::new("test", 0.0, data.test.clone()), EvalSet::new("ood1", 0.0, data.ood1.clone())];
    let per_trial: Vec<Vec<TrialOutcome>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let train = training_set(cfg, &data.pool, trial, cfg.n_train_fields)?;
            Ok(fit_and_score(&train, &configs, &[&sets[0].data, &sets[1].data]))
        })
        .collect::<Result<Vec<_>>>()?;
    let config_hash = cfg.hash();
    let mut report = EvalReport {
        rows: Vec::new(),
        notes: vec![format!(
            "over/under-parameterization threshold n_p = N_fields x nt = {}",
            cfg.n_train_fields * data.pool.nt()
        )],
    };
    for (k, (p, c)) in cfg.param_grid.iter().zip(&configs).enumerate() {
        let key = RowKey {
            experiment: "sweep-params",
            model: format!("{}[{},{},{}]", base.name, p.d_in, p.d_out, p.s_max),
            config: c,
            n_train_fields: cfg.n_train_fields,
            nt: data.pool.nt(),
        };
        let outcomes: Vec<&TrialOutcome> = per_trial.iter().map(|o| &o[k]).collect();
        report.rows.extend(collect_rows(&key, &[&sets[0], &sets[1]], &outcomes, &config_hash));
    }
    Ok(report)
}

/// Retrain every preset on nested training sets of `cfg.dataset_sizes`
/// fields and score the test set.
pub fn sweep_dataset_size(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<EvalReport> {
    cfg.validate()?;
    if cfg.dataset_sizes.is_empty() {
        return Err(Error::Config("empty dataset-size list".into()));
    }
    let models: Vec<ModelSpec> = cfg.presets.iter().map(|p| cfg.model(p)).collect::<Result<_>>()?;
    let configs: Vec<MpceConfig> = models.iter().map(|m| m.config.clone()).collect();
    let sets = [EvalSet::new("test", 0.0, data.test.clone())];
    let config_hash = cfg.hash();
    let jobs: Vec<(usize, usize)> =
        (0..cfg.dataset_sizes.len()).flat_map(|s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let outcomes: Vec<Vec<TrialOutcome>> = jobs
        .par_iter()
        .map(|&(s, trial)| {
            let train = training_set(cfg, &data.pool, trial, cfg.dataset_sizes[s])?;
            Ok(fit_and_score(&train, &configs, &[&sets[0].data]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::default();
    for (s, &size) in cfg.dataset_sizes.iter().enumerate() {
        for (m, spec) in models.iter().enumerate() {
            let key = RowKey {
                experiment: "sweep-data",
                model: spec.name.clone(),
                config: &spec.config,
                n_train_fields: size,
                nt: data.pool.nt(),
            };
            let outs: Vec<&TrialOutcome> =
                jobs.iter().zip(&outcomes).filter(|((js, _), _)| *js == s).map(|(_, o)| &o[m]).collect();
            report.rows.extend(collect_rows(&key, &[&sets[0]], &outs, &config_hash));
        }
    }
    Ok(report)
}
