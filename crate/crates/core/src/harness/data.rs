//! Dataset generation: KLE samples for `v(0)`, integrated in parallel.

use rayon::prelude::*;

use crate::error::Result;
use crate::grf::{self, FieldSet, KleConfig};
use crate::model::{CaseLabel, Dataset, GenerationConfig, Grid2D, Regime, ScalarField, SolverParams};
use crate::seed;
use crate::solver;

/// Generation settings for one of the standard splits of a regime.
pub fn preset_config(regime: Regime, set: FieldSet, seed: u64) -> GenerationConfig {
    GenerationConfig {
        solver: SolverParams::with_regime(regime),
        kle: KleConfig::preset(regime, set),
        seed,
        clip_negative: false,
    }
}

pub fn preset_label(regime: Regime, set: FieldSet) -> CaseLabel {
    match (regime, set) {
        (Regime::I, FieldSet::Train) => CaseLabel::CaseI,
        (Regime::II, FieldSet::Train) => CaseLabel::CaseII,
        (r, FieldSet::Ood1) => CaseLabel::Ood1(r),
        (r, FieldSet::Ood2) => CaseLabel::Ood2(r),
    }
}

/// Sample `n` input fields and simulate each one. Field `i` depends only on
/// `cfg.seed` and `i`, so a prefix of a larger dataset equals the smaller
/// dataset generated with the same configuration.
pub fn generate(label: CaseLabel, grid: Grid2D, cfg: &GenerationConfig, n: usize) -> Result<Dataset> {
    cfg.solver.validate()?;
    let kle = grf::fit(&grid, &cfg.kle)?;
    log::info!(
        "{label}: {} KLE modes capture {:.4} of the variance",
        kle.truncation(),
        kle.captured_energy()
    );
    let mut inputs = kle.sample(n, seed::derive_named(cfg.seed, "kle"));
    if cfg.clip_negative {
        inputs = inputs
            .into_iter()
            .map(|f| ScalarField::from_parts_unchecked(grid, f.values().iter().map(|v| v.max(0.0)).collect()))
            .collect();
    }
    let trajectories = inputs
        .par_iter()
        .map(|h2| solver::simulate(h2, &cfg.solver))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut ds = Dataset::new(label, trajectories, Some(cfg.clone()))?;
    ds.kle_modes = Some(kle.truncation());
    Ok(ds)
}
