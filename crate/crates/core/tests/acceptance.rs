//! Acceptance suite. Prints one PASS/FAIL line per criterion; the
//! reports behind the surrogate criteria are written next to the cached
//! datasets under the cargo target directory.
//!
//! The exit status is nonzero when the pipeline errors, and also on any FAIL
//! when `MPCE_ACCEPTANCE_STRICT=1`.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use mpce_core::harness::experiment::{
    run_comparison, sweep_dataset_size, sweep_parameters, ExperimentConfig, ExperimentData,
};
use mpce_core::harness::report::{EvalReport, EvalRow};
use mpce_core::kpca::{self, KernelSpec, KpcaModel};
use mpce_core::pce::{count_params, PceModel, PolyFamily};
use mpce_core::solver::simulate_from;
use mpce_core::{seed, Grid2D, Regime, Result, ScalarField, SolverParams};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

const FIXED_POINT_TOL: f64 = 1e-8;
const FIXED_POINT_SECONDS: f64 = 1.0;
const DECAY_TOL: f64 = 0.01;
const ORDER_RANGE: (f64, f64) = (1.8, 2.2);
const KPCA_TOL: f64 = 1e-8;
const PCE_TOL: f64 = 1e-6;
const CASE_I_BAND: (f64, f64) = (2.5, 6.5);
const NOISE_MARGIN: f64 = 1.0;
const TREND_STD_FACTOR: f64 = 2.0;
const U_IMPROVEMENT_MAX: f64 = 1.0;
const TRIALS: usize = 5;
const N_TRAIN: usize = 800;
const SIZES: [usize; 4] = [100, 200, 400, 800];

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(name: &'static str, pass: bool, detail: String) -> Line {
    Line { name, pass, detail }
}

fn emit(lines: &mut Vec<Line>, l: Line) {
    println!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
    lines.push(l);
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn fixed_point() -> Result<Line> {
    let p = SolverParams::case_i();
    let g = Grid2D::default();
    let start = Instant::now();
    let traj = simulate_from(&ScalarField::constant(g, 1.0), &ScalarField::constant(g, 1.7), &p)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = traj.snapshots().iter().flat_map(|s| s.values()).map(|v| (v - 1.7).abs()).fold(0.0, f64::max);
    let pass = worst <= FIXED_POINT_TOL && secs < FIXED_POINT_SECONDS;
    Ok(line("solver-fixed-point", pass, format!("max |v - 1.7| = {worst:.2e} (tol {FIXED_POINT_TOL:.0e}), {secs:.3}s")))
}

fn eigenmode_error(n: usize, t_end: f64, nt: usize) -> Result<f64> {
    let g = Grid2D::unit_square(n, n)?;
    let p = SolverParams { reaction: false, t_end, nt, ..SolverParams::case_i() };
    let f = ScalarField::from_fn(g, |x, y| (PI * x).cos() * (PI * y).cos());
    let traj = simulate_from(&ScalarField::constant(g, 0.0), &f, &p)?;
    let mut worst = 0.0f64;
    for (s, &t) in traj.snapshots().iter().zip(traj.times()) {
        let decay = (-2.0 * PI * PI * p.d1 * t).exp();
        let num: f64 = s.values().iter().zip(f.values()).map(|(a, b)| (a - decay * b).powi(2)).sum();
        let den: f64 = f.values().iter().map(|b| (decay * b).powi(2)).sum();
        worst = worst.max((num / den).sqrt());
    }
    Ok(worst)
}

fn convergence() -> Result<Line> {
    let decay = eigenmode_error(28, 1.0, 20)?;
    let errs = [eigenmode_error(28, 0.2, 4)?, eigenmode_error(56, 0.2, 4)?, eigenmode_error(112, 0.2, 4)?];
    let h = [27.0f64, 55.0, 111.0];
    let orders: Vec<f64> = (0..2).map(|k| (errs[k] / errs[k + 1]).ln() / (h[k + 1] / h[k]).ln()).collect();
    let order_ok = orders.iter().all(|o| (ORDER_RANGE.0..=ORDER_RANGE.1).contains(o));
    Ok(line(
        "solver-convergence",
        decay <= DECAY_TOL && order_ok,
        format!("eigenmode decay error {:.3}% (tol 1%); observed orders {:.3}, {:.3}", 100.0 * decay, orders[0], orders[1]),
    ))
}

fn parameter_counts() -> Result<Line> {
    let u = count_params(2, 18, 20)?;
    let o = count_params(2, 30, 45)?;
    Ok(line("parameter-counts", u == 3_800 && o == 22_320, format!("U {u}, O {o}")))
}

fn gaussian(rows: usize, cols: usize, s: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(s);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn kpca_oracle() -> Result<Line> {
    let x = gaussian(50, 10, 1);
    let model = KpcaModel::fit(&x, &KernelSpec::Linear, 10)?;
    let mean = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    let svd = xc.svd(true, false);
    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.as_ref().expect("U");
    let z = model.training_latents();
    let mut worst = 0.0f64;
    for (k, &j) in order.iter().enumerate() {
        let scores = u.column(j) * svd.singular_values[j];
        let same = (z.column(k) - &scores).amax();
        let flipped = (z.column(k) + &scores).amax();
        worst = worst.max(same.min(flipped));
    }
    let centered = kpca::center(&kpca::gram(&x, &KernelSpec::Linear));
    let row_sum = centered.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    Ok(line(
        "kpca-oracle",
        worst <= KPCA_TOL && row_sum <= KPCA_TOL,
        format!("max score deviation {worst:.2e}, max centered row sum {row_sum:.2e} (tol {KPCA_TOL:.0e})"),
    ))
}

fn pce_recovery() -> Result<Line> {
    let (k, n) = (3, 40);
    let quad = |z: &[f64]| 1.5 - z[0] + 0.5 * z[1] * z[2] + 2.0 * z[2] * z[2] - 0.3 * z[0] * z[1];
    let lin = |z: &[f64]| 0.2 + z[1] - z[0] * z[0];
    let targets = |z: &DMatrix<f64>| {
        DMatrix::from_fn(z.nrows(), 2, |i, c| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            if c == 0 {
                quad(&row)
            } else {
                lin(&row)
            }
        })
    };
    let z = gaussian(n, k, 2);
    let model = PceModel::fit(&z, &targets(&z), 2, PolyFamily::Hermite, 0.0)?;
    let probe = gaussian(25, k, 3);
    let truth = targets(&probe);
    let rel = (model.predict_batch(&probe)? - &truth).norm() / truth.norm();
    let terms = model.n_params() / model.output_dim();
    Ok(line(
        "pce-exact-recovery",
        rel <= PCE_TOL && n >= 2 * terms,
        format!("relative error {rel:.2e} (tol {PCE_TOL:.0e}), N = {n}, S = {terms}"),
    ))
}

fn cache_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn case_config(regime: Regime) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(regime);
    cfg.name = format!("acceptance-case-{regime}");
    cfg.n_train_fields = N_TRAIN;
    cfg.trials = TRIALS;
    cfg.dataset_sizes = SIZES.to_vec();
    cfg.pool_fields = Some(N_TRAIN * 5 / 4);
    cfg.data_dir = Some(cache_root().join(format!("case-{regime}")));
    cfg
}

fn cell<'a>(report: &'a EvalReport, model: &str, set: &str) -> &'a EvalRow {
    report.find(model, set).unwrap_or_else(|| panic!("missing row {model}/{set}"))
}

fn fmt(r: &EvalRow) -> String {
    format!("{:.2} ± {:.2}%", r.mean, r.std)
}

fn save(report: &EvalReport, name: &str) {
    let path = cache_root().join(format!("{name}.jsonl"));
    if let Err(e) = std::fs::write(&path, report.to_jsonl()) {
        eprintln!("could not write {}: {e}", path.display());
    }
    eprintln!("{}", report.to_table());
}

fn run() -> Result<Vec<Line>> {
    let mut lines = Vec::new();
    for l in [fixed_point()?, convergence()?, parameter_counts()?, kpca_oracle()?, pce_recovery()?] {
        emit(&mut lines, l);
    }
    std::fs::create_dir_all(cache_root()).ok();

    let start = Instant::now();
    let cfg1 = case_config(Regime::I);
    let data1 = ExperimentData::prepare(&cfg1)?;
    eprintln!("case I data ready in {:.1}s", start.elapsed().as_secs_f64());
    let compare = run_comparison(&cfg1, &data1)?;
    save(&compare, "case-i-compare");

    let o = cell(&compare, "o-mpce", "test");
    let u = cell(&compare, "u-mpce", "test");
    let ood1 = cell(&compare, "o-mpce", "ood1");
    let ood2 = cell(&compare, "o-mpce", "ood2");
    let u_ood1 = cell(&compare, "u-mpce", "ood1");
    let u_ood2 = cell(&compare, "u-mpce", "ood2");
    let band = (CASE_I_BAND.0..=CASE_I_BAND.1).contains(&o.mean);
    let ordering = u.mean > o.mean;
    let ood = ood2.mean < ood1.mean && u_ood2.mean < u_ood1.mean;
    let extra = Line {
        name: "case-i-reproduction",
        pass: band && ordering && ood && !compare.has_failures(),
        detail: format!(
            "O test {} in [{}, {}]% {}; U {} > O {}; OOD2 < OOD1: O {} vs {}, U {} vs {} {}; mean fit {:.2}s",
            fmt(o),
            CASE_I_BAND.0,
            CASE_I_BAND.1,
            verdict(band),
            fmt(u),
            verdict(ordering),
            fmt(ood2),
            fmt(ood1),
            fmt(u_ood2),
            fmt(u_ood1),
            verdict(ood),
            o.fit_seconds
        ),
    };
    emit(&mut lines, extra);

    let noisy = cell(&compare, "o-mpce", "test+noise10%");
    let noise = Line {
        name: "noise-robustness",
        pass: noisy.mean - o.mean <= NOISE_MARGIN,
        detail: format!("O clean {} -> +10% noise {} (margin {NOISE_MARGIN} point)", fmt(o), fmt(noisy)),
    };
    emit(&mut lines, noise);

    let sizes = sweep_dataset_size(&cfg1, &data1)?;
    save(&sizes, "case-i-sweep-data");
    let series = |model: &str| -> Vec<&EvalRow> {
        SIZES.iter().map(|&n| sizes.rows.iter().find(|r| r.model == model && r.n_train_fields == n).expect("row")).collect()
    };
    let o_series = series("o-mpce");
    let u_series = series("u-mpce");
    let monotone =
        o_series.windows(2).all(|w| w[1].mean - w[0].mean <= TREND_STD_FACTOR * w[0].std.max(w[1].std));
    let u_gain = u_series[0].mean - u_series[SIZES.len() - 1].mean;
    let trend = Line {
        name: "dataset-size-trend",
        pass: monotone && u_gain <= U_IMPROVEMENT_MAX && !sizes.has_failures(),
        detail: format!(
            "O {} {}; U improvement {:.2} points (max {U_IMPROVEMENT_MAX}) {}",
            o_series.iter().map(|r| format!("{:.2}", r.mean)).collect::<Vec<_>>().join(" -> "),
            verdict(monotone),
            u_gain,
            verdict(u_gain <= U_IMPROVEMENT_MAX)
        ),
    };
    emit(&mut lines, trend);

    let sweep = sweep_parameters(&cfg1, &data1)?;
    save(&sweep, "case-i-sweep-params");
    let tests: Vec<&EvalRow> = sweep.rows.iter().filter(|r| r.eval_set == "test").collect();
    let smallest = tests.iter().min_by_key(|r| r.n_params).expect("grid");
    let largest = tests.iter().max_by_key(|r| r.n_params).expect("grid");
    let preset = tests.iter().find(|r| r.n_params == 22_320).expect("grid contains the O preset");
    let u_shape = preset.mean <= smallest.mean && preset.mean <= largest.mean;
    let sweep_line = Line {
        name: "parameter-sweep-u-shape",
        pass: u_shape && !sweep.has_failures(),
        detail: format!(
            "n_p {} -> {:.2}%, n_p 22320 -> {:.2}%, n_p {} -> {:.2}%; curve {}",
            smallest.n_params,
            smallest.mean,
            preset.mean,
            largest.n_params,
            largest.mean,
            tests.iter().map(|r| format!("{}:{:.2}", r.n_params, r.mean)).collect::<Vec<_>>().join(" ")
        ),
    };
    emit(&mut lines, sweep_line);

    let mut cfg2 = case_config(Regime::II);
    cfg2.presets = vec!["o-mpce".into()];
    cfg2.noise_levels.clear();
    cfg2.dataset_sizes = vec![N_TRAIN];
    let data2 = ExperimentData::prepare(&cfg2)?;
    let compare2 = run_comparison(&cfg2, &data2)?;
    save(&compare2, "case-ii-compare");
    let o2 = cell(&compare2, "o-mpce", "test");
    let gap = Line {
        name: "case-ii-smoothness-gap",
        pass: o2.mean > o.mean && !compare2.has_failures(),
        detail: format!("O case II {} vs case I {}", fmt(o2), fmt(o)),
    };
    emit(&mut lines, gap);
    eprintln!("acceptance run took {:.1}s", start.elapsed().as_secs_f64());
    Ok(lines)
}

fn main() {
    let lines = match run() {
        Ok(lines) => lines,
        Err(e) => {
            println!("FAIL acceptance: pipeline error: {e}");
            std::process::exit(2);
        }
    };
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.name).collect();
    println!("{} of {} criteria passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var("MPCE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
