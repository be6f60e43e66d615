//! Evaluation reports: JSON lines, aligned text tables and CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;

/// One (model, evaluation set) cell aggregated over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub experiment: String,
    pub model: String,
    pub d_in: usize,
    pub d_out: usize,
    pub s_max: usize,
    pub n_params: u64,
    pub n_train_fields: usize,
    /// `n_train_fields * nt`; the over-parameterization threshold.
    pub n_train_points: usize,
    pub over_parameterized: bool,
    pub eval_set: String,
    /// Input noise ratio applied to this set (zero when clean).
    pub noise: f64,
    /// Relative L2 error in percent, mean and population std over trials.
    pub mean: f64,
    pub std: f64,
    pub trial_errors: Vec<f64>,
    pub failures: Vec<String>,
    pub fit_seconds: f64,
    pub config_hash: String,
    pub train_hashes: Vec<String>,
    pub eval_hash: String,
}

impl EvalRow {
    pub fn aggregate(&mut self) {
        let (mean, std) = mean_std(&self.trial_errors);
        self.mean = mean;
        self.std = std;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Free-text notes such as the noise reference scale.
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn find(&self, model: &str, eval_set: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.model == model && r.eval_set == eval_set)
    }

    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        for n in other.notes {
            if !self.notes.contains(&n) {
                self.notes.push(n);
            }
        }
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.failures.is_empty() || !r.mean.is_finite())
    }

    /// One JSON object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<serde_json::Result<Vec<EvalRow>>>()?;
        Ok(Self { rows, notes: Vec::new() })
    }

    /// Columnar data for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "experiment,model,d_in,d_out,s_max,n_params,n_train_fields,n_train_points,over_parameterized,eval_set,noise,mean,std,trials,failures,fit_seconds\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{:.3}",
                r.experiment,
                r.model,
                r.d_in,
                r.d_out,
                r.s_max,
                r.n_params,
                r.n_train_fields,
                r.n_train_points,
                r.over_parameterized,
                r.eval_set,
                r.noise,
                r.mean,
                r.std,
                r.trial_errors.len(),
                r.failures.len(),
                r.fit_seconds
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = ["experiment", "model", "n_p", "N_fields", "set", "error %", "trials"];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let err = if r.mean.is_finite() {
                    format!("{:.2} ± {:.2}", r.mean, r.std)
                } else {
                    "failed".to_string()
                };
                let trials = if r.failures.is_empty() {
                    r.trial_errors.len().to_string()
                } else {
                    format!("{} ({} failed)", r.trial_errors.len(), r.failures.len())
                };
                [
                    r.experiment.clone(),
                    r.model.clone(),
                    r.n_params.to_string(),
                    r.n_train_fields.to_string(),
                    r.eval_set.clone(),
                    err,
                    trials,
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&mut out, &header.map(String::from));
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for row in &cells {
            line(&mut out, row);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
