//! Error metrics and input perturbations.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, LinalgError, ModelError, Result};
use crate::model::{ScalarField, Trajectory};
use crate::seed;

/// `100 * ‖pred - truth‖₂ / ‖truth‖₂` over the flattened trajectories.
pub fn relative_l2(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    if pred.grid() != truth.grid() {
        return Err(ModelError::GridMismatch.into());
    }
    relative_l2_slices(&pred.flatten(), &truth.flatten())
}

pub fn relative_l2_slices(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(LinalgError::DimensionMismatch { expected: truth.len(), found: pred.len() }.into());
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if !(den > 0.0) {
        return Err(Error::Config("relative error undefined for a zero-norm truth".into()));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Per-row relative L2 error in percent for `n x D` prediction and truth
/// matrices.
pub fn relative_l2_rows(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(LinalgError::DimensionMismatch { expected: truth.len(), found: pred.len() }.into());
    }
    (0..truth.nrows())
        .map(|i| {
            let t = truth.row(i);
            let den = t.norm();
            if !(den > 0.0) {
                return Err(Error::Config(format!("relative error undefined: truth row {i} has zero norm")));
            }
            Ok(100.0 * (pred.row(i) - t).norm() / den)
        })
        .collect()
}

/// Mean of the per-sample errors (mean of ratios).
pub fn mean_relative_l2(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    let rows = relative_l2_rows(pred, truth)?;
    if rows.is_empty() {
        return Err(Error::Config("no samples to score".into()));
    }
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Population standard deviation of every value of every field.
pub fn field_std(fields: &[ScalarField]) -> f64 {
    let n: usize = fields.iter().map(|f| f.values().len()).sum();
    if n == 0 {
        return 0.0;
    }
    let mean = fields.iter().flat_map(|f| f.values()).sum::<f64>() / n as f64;
    let var = fields.iter().flat_map(|f| f.values()).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Add i.i.d. `N(0, (rho * sigma_ref)²)` noise to every node, where
/// `sigma_ref` is [`field_std`] of the whole set. Field `i` draws from
/// `seed::derive(seed, i)`.
pub fn add_input_noise(fields: &[ScalarField], rho: f64, seed: u64) -> Result<Vec<ScalarField>> {
    let sigma = rho * field_std(fields);
    add_noise_with_std(fields, sigma, seed)
}

/// Add i.i.d. `N(0, sigma²)` noise to every node.
pub fn add_noise_with_std(fields: &[ScalarField], sigma: f64, seed: u64) -> Result<Vec<ScalarField>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("noise level must be finite and nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(fields.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("validated std");
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = seed::rng(seed::derive(seed, i as u64));
            let values = f.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
            Ok(ScalarField::new(*f.grid(), values)?)
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
