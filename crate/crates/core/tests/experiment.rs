use mpce_core::harness::experiment::{
    run_comparison, sweep_dataset_size, sweep_parameters, trial_permutation, ExperimentConfig, ExperimentData,
    GridPoint, ModelSpec, NoiseTarget,
};
use mpce_core::harness::report::{EvalReport, EvalRow};
use mpce_core::mpce::MpceConfig;
use mpce_core::{Grid2D, Regime};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Regime::I);
    cfg.grid = Grid2D::unit_square(10, 10).unwrap();
    cfg.n_train_fields = 24;
    cfg.pool_fields = Some(30);
    cfg.n_test_fields = 8;
    cfg.n_ood_fields = 6;
    cfg.trials = 2;
    cfg.custom_models = vec![
        ModelSpec { name: "tiny".into(), config: MpceConfig::new(5, 6) },
        ModelSpec { name: "wide".into(), config: MpceConfig::new(8, 10) },
    ];
    cfg.presets = vec!["tiny".into()];
    cfg.sweep_model = "tiny".into();
    cfg.param_grid = vec![GridPoint::new(3, 4, 1), GridPoint::new(5, 6, 2), GridPoint::new(8, 10, 3)];
    cfg.dataset_sizes = vec![12, 24];
    cfg.seed = 7;
    cfg
}

fn without_timings(report: &EvalReport) -> Vec<EvalRow> {
    report.rows.iter().cloned().map(|r| EvalRow { fit_seconds: 0.0, ..r }).collect()
}

#[test]
fn comparison_covers_every_set_and_is_reproducible() {
    let mut cfg = tiny();
    cfg.custom_models.truncate(1);
    let data = ExperimentData::prepare(&cfg).unwrap();
    let a = run_comparison(&cfg, &data).unwrap();
    let sets: Vec<&str> = a.rows.iter().map(|r| r.eval_set.as_str()).collect();
    assert_eq!(sets, ["test", "ood1", "ood2", "test+noise10%"]);
    for r in &a.rows {
        assert_eq!(r.trial_errors.len(), 2);
        assert!(r.mean >= 0.0 && r.std >= 0.0 && r.failures.is_empty());
        assert_eq!(r.config_hash, cfg.hash());
        assert_eq!(r.train_hashes.len(), 2);
        assert_ne!(r.train_hashes[0], r.train_hashes[1]);
        assert!(!r.eval_hash.is_empty());
        assert_eq!(r.n_train_points, 24 * 20);
    }
    let again = run_comparison(&cfg, &ExperimentData::prepare(&cfg).unwrap()).unwrap();
    assert_eq!(without_timings(&a), without_timings(&again));
}

#[test]
fn single_trial_has_zero_std() {
    let mut cfg = tiny();
    cfg.trials = 1;
    cfg.noise_levels.clear();
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = run_comparison(&cfg, &data).unwrap();
    assert!(report.rows.iter().all(|r| r.std == 0.0 && r.trial_errors.len() == 1));
    assert_eq!(report.rows.len(), 2 * 3);
}

#[test]
fn training_noise_mode_scores_the_clean_test_set() {
    let mut cfg = tiny();
    cfg.custom_models.truncate(1);
    cfg.noise_target = NoiseTarget::Train;
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = run_comparison(&cfg, &data).unwrap();
    let row = report.find("tiny", "test|train-noise10%").unwrap();
    assert_eq!(row.noise, 0.1);
    assert_eq!(row.eval_hash, report.find("tiny", "test").unwrap().eval_hash);
    assert_ne!(row.train_hashes, report.find("tiny", "test").unwrap().train_hashes);
}

#[test]
fn failures_are_recorded_and_the_run_continues() {
    let mut cfg = tiny();
    cfg.custom_models.push(ModelSpec { name: "huge".into(), config: MpceConfig::new(40, 6) });
    cfg.presets = vec!["huge".into(), "tiny".into()];
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = run_comparison(&cfg, &data).unwrap();
    let huge = report.find("huge", "test").unwrap();
    assert_eq!(huge.failures.len(), 2);
    assert!(!huge.mean.is_finite());
    assert!(report.find("tiny", "test").unwrap().mean.is_finite());
    assert!(report.has_failures());
}

#[test]
fn parameter_sweep_marks_the_threshold() {
    let cfg = tiny();
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = sweep_parameters(&cfg, &data).unwrap();
    assert_eq!(report.rows.len(), 3 * 2);
    for r in &report.rows {
        assert_eq!(r.over_parameterized, r.n_params > r.n_train_points as u64);
    }
    let top = report.find("tiny[8,10,3]", "test").unwrap();
    assert_eq!(top.n_params, 165 * 10);

    let mut single = tiny();
    single.param_grid.truncate(1);
    assert_eq!(sweep_parameters(&single, &data).unwrap().rows.len(), 2);
}

#[test]
fn dataset_sweep_uses_nested_subsets() {
    let cfg = tiny();
    let perm = trial_permutation(&cfg, 30, 1);
    assert_eq!(trial_permutation(&cfg, 30, 1), perm);
    assert_ne!(trial_permutation(&cfg, 30, 0), perm);
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = sweep_dataset_size(&cfg, &data).unwrap();
    let sizes: Vec<usize> = report.rows.iter().map(|r| r.n_train_fields).collect();
    assert_eq!(sizes, [12, 24]);

    let mut single = tiny();
    single.dataset_sizes = vec![12];
    assert_eq!(sweep_dataset_size(&single, &data).unwrap().rows.len(), 1);
}

#[test]
fn config_parses_from_toml_and_json() {
    let cfg = ExperimentConfig::parse("case = \"i\"\ntrials = 3\nnoise_levels = [0.0, 0.1]\n").unwrap();
    assert_eq!(cfg.trials, 3);
    assert_eq!(cfg.pool_fields(), 2000);
    let json = serde_json::to_string(&tiny()).unwrap();
    assert_eq!(ExperimentConfig::parse(&json).unwrap(), tiny());
    assert!(ExperimentConfig::parse("case = \"i\"\ntrials = 0\n").is_err());
    assert!(ExperimentConfig::parse("case = \"i\"\nnoise_levels = [-0.1]\n").is_err());
    assert!(ExperimentConfig::parse("case = \"i\"\npresets = [\"nope\"]\n").is_err());
}

#[test]
fn datasets_are_cached() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.data_dir = Some(dir.path().to_path_buf());
    let first = ExperimentData::prepare(&cfg).unwrap();
    assert!(dir.path().join("pool").join("manifest.json").exists());
    let second = ExperimentData::prepare(&cfg).unwrap();
    assert_eq!(first.pool, second.pool);
    assert_eq!(first.ood2, second.ood2);
    cfg.n_test_fields = 5;
    assert_eq!(ExperimentData::prepare(&cfg).unwrap().test.n_fields(), 5);
}

#[test]
fn report_formats_round_trip() {
    let mut cfg = tiny();
    cfg.trials = 1;
    let data = ExperimentData::prepare(&cfg).unwrap();
    let report = run_comparison(&cfg, &data).unwrap();
    let back = EvalReport::from_jsonl(&report.to_jsonl()).unwrap();
    assert_eq!(back.rows, report.rows);
    assert_eq!(report.to_csv().lines().count(), report.rows.len() + 1);
    assert!(report.to_table().contains("ood2"));
}

#[test]
fn documented_config_parses() {
    let text = r#"
name = "case-i"
case = "i"
n_train_fields = 800
n_test_fields = 200
trials = 5
noise_levels = [0.1]
noise_target = "train"
presets = ["u-mpce", "o-mpce"]
dataset_sizes = [100, 200, 400, 800]
seed = 0
data_dir = "data/case-i"
"#;
    let cfg = ExperimentConfig::parse(text).unwrap();
    assert_eq!(cfg.noise_target, NoiseTarget::Train);
    assert_eq!(cfg.data_dir.as_deref(), Some(std::path::Path::new("data/case-i")));
    assert_eq!(cfg.pool_fields(), 1000);
}
