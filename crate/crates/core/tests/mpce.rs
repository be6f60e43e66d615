use std::fs;

use mpce_core::error::IoError;
use mpce_core::grf::{FieldSet, KleConfig};
use mpce_core::harness::data;
use mpce_core::harness::metrics::mean_relative_l2;
use mpce_core::io;
use mpce_core::kpca::KpcaModel;
use mpce_core::mpce::{MpceConfig, MpceSurrogate, OutputMode, OutputReduction};
use mpce_core::pce::PceModel;
use mpce_core::{CaseLabel, Dataset, Grid2D, Regime, ScalarField, Trajectory};
use nalgebra::DMatrix;

/// Mean training relative L2 (%) of the miniature run, frozen from the first
/// implementation.
const MINIATURE_TRAIN_ERROR: f64 = 1.1346;

fn miniature(n: usize, seed: u64) -> Dataset {
    let grid = Grid2D::unit_square(12, 12).unwrap();
    let mut cfg = data::preset_config(Regime::I, FieldSet::Train, seed);
    cfg.solver.nt = 5;
    data::generate(CaseLabel::CaseI, grid, &cfg, n).unwrap()
}

fn small_config() -> MpceConfig {
    MpceConfig::new(8, 10)
}

fn bits(m: &DMatrix<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn miniature_training_error_fixture() {
    let train = miniature(50, 1);
    let model = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let err = mean_relative_l2(&model.predict_matrix(&train.input_matrix()).unwrap(), &train.output_matrix()).unwrap();
    assert!(err <= MINIATURE_TRAIN_ERROR, "{err}% vs fixture {MINIATURE_TRAIN_ERROR}%");
    assert!((err / 100.0 - model.info().train_error).abs() < 1e-9);
    assert_eq!(model.n_params(), 45 * 10);
    assert_eq!(model.info().n_train, 50);
    assert_eq!(model.info().dataset_hash, io::dataset_hash(&train));
}

#[test]
fn preset_parameter_counts() {
    assert_eq!(MpceConfig::u_mpce(Regime::I).n_params().unwrap(), 3_800);
    assert_eq!(MpceConfig::o_mpce(Regime::I).n_params().unwrap(), 22_320);
}

#[test]
fn identical_trajectories_give_a_constant_prediction() {
    let base = miniature(20, 2);
    let target = base.trajectories[0].clone();
    let trajectories: Vec<Trajectory> = base
        .trajectories
        .iter()
        .map(|t| Trajectory::new(t.input().clone(), target.snapshots().to_vec(), target.times().to_vec()).unwrap())
        .collect();
    let train = Dataset::new(CaseLabel::CaseI, trajectories, None).unwrap();
    let model = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let probe = miniature(3, 9);
    let pred = model.predict_matrix(&probe.input_matrix()).unwrap();
    let truth = target.flatten();
    for row in pred.row_iter() {
        let err: f64 = row.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "deviation {err}");
    }
}

#[test]
fn zero_variance_inputs_reproduce_the_deterministic_trajectory() {
    let grid = Grid2D::unit_square(12, 12).unwrap();
    let mut cfg = data::preset_config(Regime::I, FieldSet::Train, 3);
    cfg.solver.nt = 5;
    cfg.kle = KleConfig { sigma2: 0.0, ..cfg.kle };
    let train = data::generate(CaseLabel::CaseI, grid, &cfg, 10).unwrap();
    let model = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let pred = model.predict(&ScalarField::constant(grid, 0.0)).unwrap();
    let err = mean_relative_l2(
        &DMatrix::from_row_slice(1, pred.output_len(), &pred.flatten()),
        &DMatrix::from_row_slice(1, pred.output_len(), &train.trajectories[0].flatten()),
    )
    .unwrap();
    assert!(err < 1e-6, "{err}%");
}

#[test]
fn identity_outputs_match_input_only_regression() {
    let train = miniature(40, 4);
    let test = miniature(5, 5);
    let cfg = MpceConfig { output_mode: OutputMode::Identity, ..small_config() };
    let model = MpceSurrogate::fit(&train, &cfg).unwrap();
    assert!(matches!(model.output_reduction(), OutputReduction::Identity));
    assert_eq!(model.d_out(), 144 * 5);

    let kpca = KpcaModel::fit(&train.input_matrix(), &cfg.input_kernel, cfg.d_in).unwrap();
    let pce = PceModel::fit(kpca.training_latents(), &train.output_matrix(), cfg.s_max, cfg.family, cfg.ridge).unwrap();
    let reference = pce.predict_batch(&kpca.transform_batch(&test.input_matrix()).unwrap()).unwrap();
    let pred = model.predict_matrix(&test.input_matrix()).unwrap();
    let diff = (&pred - &reference).amax();
    assert!(diff <= 1e-10, "max deviation {diff}");
}

#[test]
fn prediction_cannot_beat_its_decoder() {
    let train = miniature(50, 6);
    let test = miniature(20, 7);
    let model = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let OutputReduction::Kpca(out) = model.output_reduction() else { panic!("kpca outputs") };
    let y = test.output_matrix();
    let recon = out.inverse_transform_batch(&out.transform_batch(&y).unwrap()).unwrap();
    let floor = mean_relative_l2(&recon, &y).unwrap();
    let err = mean_relative_l2(&model.predict_matrix(&test.input_matrix()).unwrap(), &y).unwrap();
    assert!(err >= floor, "prediction {err}% below decoder floor {floor}%");
    assert!(100.0 * model.info().train_error >= 100.0 * model.info().output_reconstruction * 0.999);
}

#[test]
fn fitting_is_deterministic() {
    let train = miniature(30, 8);
    let test = miniature(4, 9);
    let a = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let b = MpceSurrogate::fit(&train, &small_config()).unwrap();
    let x = test.input_matrix();
    assert_eq!(bits(&a.predict_matrix(&x).unwrap()), bits(&b.predict_matrix(&x).unwrap()));
    assert_eq!(a.info().train_error.to_bits(), b.info().train_error.to_bits());
}

#[test]
fn grid_mismatch_is_rejected() {
    let model = MpceSurrogate::fit(&miniature(20, 1), &small_config()).unwrap();
    let other = ScalarField::constant(Grid2D::unit_square(10, 10).unwrap(), 0.0);
    assert!(model.predict(&other).is_err());
}

#[test]
fn dimensions_beyond_the_sample_count_are_rejected() {
    let train = miniature(10, 1);
    assert!(MpceSurrogate::fit(&train, &MpceConfig::new(11, 5)).is_err());
    assert!(MpceSurrogate::fit(&train, &MpceConfig::new(5, 11)).is_err());
}

fn round_trip(cfg: &MpceConfig) {
    let train = miniature(30, 10);
    let model = MpceSurrogate::fit(&train, cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::save_model(&model, dir.path()).unwrap();
    let back = io::load_model(dir.path()).unwrap();
    let x = miniature(10, 11).input_matrix();
    assert_eq!(bits(&model.predict_matrix(&x).unwrap()), bits(&back.predict_matrix(&x).unwrap()));
    assert_eq!(back.config(), model.config());
    assert_eq!(back.info(), model.info());
}

#[test]
fn save_load_round_trip_is_bitwise() {
    round_trip(&small_config());
    round_trip(&MpceConfig { standardize_inputs: true, ..small_config() });
    round_trip(&MpceConfig { output_mode: OutputMode::Identity, ..small_config() });
}

#[test]
fn truncated_or_newer_model_files_are_refused() {
    let model = MpceSurrogate::fit(&miniature(20, 12), &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::save_model(&model, dir.path()).unwrap();

    let truncated = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, truncated.path().join(p.file_name().unwrap())).unwrap();
    }
    let victim = truncated.path().join("pce.coeffs.bin");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
    assert!(io::load_model(truncated.path()).is_err());

    let path = dir.path().join(io::MANIFEST);
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest["schema_version"] = serde_json::json!(io::SCHEMA_VERSION + 1);
    fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(io::load_model(dir.path()), Err(IoError::SchemaVersion { .. })));
}
