use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mpce_core::grf::FieldSet;
use mpce_core::harness::data;
use mpce_core::harness::experiment::{
    run_comparison, sweep_dataset_size, sweep_parameters, ExperimentConfig, ExperimentData,
};
use mpce_core::harness::metrics::{mean_std, relative_l2_rows};
use mpce_core::harness::report::EvalReport;
use mpce_core::io::{self, Predictions};
use mpce_core::mpce::{MpceConfig, MpceSurrogate};
use mpce_core::{Grid2D, Regime, Scheme};

#[derive(Parser)]
#[command(name = "mpce", version, about = "Manifold PCE surrogates for Brusselator data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Ood1,
    Ood2,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::One => Regime::I,
            RegimeArg::Two => Regime::II,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Explicit,
    Imex,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    UMpce,
    OMpce,
    Custom,
}

#[derive(Subcommand)]
enum Command {
    /// Sample input fields and simulate their trajectories.
    Generate {
        #[arg(long, value_enum)]
        case: CaseArg,
        /// Regime whose dynamics the OOD sets use.
        #[arg(long, value_enum, default_value = "1")]
        base_case: RegimeArg,
        #[arg(long)]
        n_fields: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "explicit")]
        scheme: SchemeArg,
        /// Clip negative initial concentrations to zero.
        #[arg(long)]
        clip_negative: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a surrogate on a dataset.
    Train {
        #[arg(long, value_enum)]
        preset: PresetArg,
        /// Model configuration (TOML or JSON) for `--preset custom`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the trajectories of every input of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the dataset they were made for.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Compare presets on the test, OOD and noisy sets.
    Compare(ExperimentArgs),
    /// Sweep latent dimensions and degree.
    SweepParams(ExperimentArgs),
    /// Retrain on nested training sets of increasing size.
    SweepData(ExperimentArgs),
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for the report files; defaults to `reports/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn generate(
    case: CaseArg,
    base: RegimeArg,
    n: usize,
    seed: u64,
    scheme: SchemeArg,
    clip: bool,
    out: &Path,
) -> Result<()> {
    let (regime, set) = match case {
        CaseArg::One => (Regime::I, FieldSet::Train),
        CaseArg::Two => (Regime::II, FieldSet::Train),
        CaseArg::Ood1 => (base.into(), FieldSet::Ood1),
        CaseArg::Ood2 => (base.into(), FieldSet::Ood2),
    };
    let mut cfg = data::preset_config(regime, set, seed);
    cfg.solver.scheme = match scheme {
        SchemeArg::Explicit => Scheme::ExplicitSubstep,
        SchemeArg::Imex => Scheme::Imex,
    };
    cfg.clip_negative = clip;
    let ds = data::generate(data::preset_label(regime, set), Grid2D::default(), &cfg, n)?;
    let manifest = io::write_dataset(&ds, out)?;
    println!("wrote {n} trajectories ({}) to {}; hash {}", ds.case_label, out.display(), manifest.content_hash);
    Ok(())
}

fn train(preset: PresetArg, config: Option<&Path>, data_dir: &Path, out: &Path) -> Result<()> {
    let ds = io::read_dataset(data_dir)?;
    let regime = || ds.case_label.regime().context("dataset has no regime; use --preset custom");
    let cfg = match preset {
        PresetArg::UMpce => MpceConfig::u_mpce(regime()?),
        PresetArg::OMpce => MpceConfig::o_mpce(regime()?),
        PresetArg::Custom => {
            let path = config.context("--preset custom needs --config")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            MpceConfig::parse(&text)?
        }
    };
    let model = MpceSurrogate::fit(&ds, &cfg)?;
    io::save_model(&model, out)?;
    let info = model.info();
    println!(
        "trained on {} fields in {:.2}s: n_p = {}, training error {:.3}%, decoder error {:.3}%; saved to {}",
        info.n_train,
        info.fit_seconds,
        model.n_params(),
        100.0 * info.train_error,
        100.0 * info.output_reconstruction,
        out.display()
    );
    Ok(())
}

fn predict(model_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let model = io::load_model(model_dir)?;
    let ds = io::read_dataset(data_dir)?;
    let pred = model.predict_dataset(&ds)?;
    let producer = format!("mpce d_in={} d_out={} s_max={}", model.d_in(), model.d_out(), model.config().s_max);
    io::write_predictions(&Predictions::from_dataset(&pred, &ds, producer)?, out)?;
    println!("wrote {} predictions to {}", pred.n_fields(), out.display());
    Ok(())
}

fn evaluate(pred_dir: &Path, truth_dir: &Path) -> Result<()> {
    let preds = io::read_predictions(pred_dir)?;
    let truth = io::read_dataset(truth_dir)?;
    preds.check_source(&truth)?;
    if preds.is_empty() {
        bail!("no predictions to score");
    }
    let errs = relative_l2_rows(&preds.outputs, &truth.output_matrix())?;
    let (mean, std) = mean_std(&errs);
    let max = errs.iter().copied().fold(f64::MIN, f64::max);
    println!("producer: {}", preds.producer);
    println!("samples: {}", errs.len());
    println!("relative L2: mean {mean:.4}%  std {std:.4}%  max {max:.4}%");
    Ok(())
}

fn experiment(args: &ExperimentArgs, kind: &str) -> Result<bool> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let data = ExperimentData::prepare(&cfg)?;
    let report: EvalReport = match kind {
        "compare" => run_comparison(&cfg, &data)?,
        "sweep-params" => sweep_parameters(&cfg, &data)?,
        _ => sweep_dataset_size(&cfg, &data)?,
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("reports").join(&cfg.name));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let write = |ext: &str, text: String| -> Result<()> {
        let path = out.join(format!("{kind}.{ext}"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("jsonl", report.to_jsonl())?;
    write("csv", report.to_csv())?;
    let table = report.to_table();
    write("txt", table.clone())?;
    print!("{table}");
    println!("reports written to {}", out.display());
    Ok(!report.has_failures())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { case, base_case, n_fields, seed, scheme, clip_negative, out } => {
            generate(case, base_case, n_fields, seed, scheme, clip_negative, &out)?
        }
        Command::Train { preset, config, data, out } => train(preset, config.as_deref(), &data, &out)?,
        Command::Predict { model, data, out } => predict(&model, &data, &out)?,
        Command::Evaluate { pred, truth } => evaluate(&pred, &truth)?,
        Command::Compare(args) => return experiment(&args, "compare"),
        Command::SweepParams(args) => return experiment(&args, "sweep-params"),
        Command::SweepData(args) => return experiment(&args, "sweep-data"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more trials failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
