//! Batch command-line front end; every subcommand is a thin wrapper over
//! the library. See the crate examples for the richer programmatic API.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stature::assignment::{audit_assignments, AssignedDetection, TruthRecord};
use stature::baselines::{
    calibrate_posenet_offset, fit_constant_mean, fit_gender_mean, OffsetFit,
};
use stature::error::{Error, Result};
use stature::evaluation::{
    build_report, dataset_size_curve, feature_name, run_ablation_grid, split_dataset, SplitMode,
    SplitSpec,
};
use stature::io::{fmt_f64, read_csv, read_jsonl, write_jsonl, CsvWriter};
use stature::model::{AnnotatedExample, DetectionSet, Gender, PoseRecord, Subject, SubjectStore};
use stature::pipeline::{
    check_meta, gender_filter, load_rows, propagate_all, read_splits_csv, run_pipeline,
    train_from_config, write_audit_csv, write_histogram_csv, write_report_csv, write_splits_csv,
    RunConfig,
};
use stature::preprocess::{build_examples, lint_examples, PreprocessConfig};
use stature::regressors::{Checkpoint, LabeledBundle};
use stature::synth::{
    generate_identity_benchmark, generate_population, IdentityConfig, PopulationConfig,
};

#[derive(Parser)]
#[command(name = "stature", version, about = "Single-image human height estimation toolkit")]
struct Cli {
    /// Override the seed of every seeded operation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image propagation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for generated data and pipeline outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data with known ground truth.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Propagate subject height labels onto face detections.
    Propagate(PropagateArgs),
    /// Compare assignments against ground truth.
    Audit(AuditArgs),
    /// Build filtered, normalized training examples.
    Preprocess(PreprocessArgs),
    /// Partition examples into train/test/val.
    Split(SplitArgs),
    /// Fit or train a height model.
    Train(TrainArgs),
    /// Predict heights with a saved model.
    Predict(PredictArgs),
    /// Fit and apply a reference predictor.
    Baseline(BaselineArgs),
    /// Per-gender MAE report and cumulative error histogram.
    Evaluate(EvaluateArgs),
    /// Train and evaluate all feature-set by architecture combinations.
    Ablation(AblationArgs),
    /// Accuracy as a function of training-set size, per gender.
    Curve(CurveArgs),
    /// Run configured stages end to end with a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Anthropometric population: subjects, detections, poses, crops.
    Population {
        /// TOML run config supplying the [population] section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in preset: linear | nonlinear | no-signal.
        #[arg(long)]
        preset: Option<String>,
        /// Population size override.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Identity benchmark: multi-person images with a truth table.
    Identities {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in preset: imdb-like.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        n_images: Option<usize>,
    },
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    subjects: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = stature::assignment::DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    subjects: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rejection counts per reason.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.10)]
    margin: f64,
    #[arg(long, default_value_t = 32.0)]
    min_crop_px: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    examples: PathBuf,
    #[arg(long, default_value = "by-subject")]
    mode: String,
    #[arg(long, default_value_t = 0.80)]
    train: f64,
    #[arg(long, default_value_t = 0.15)]
    test: f64,
    #[arg(long, default_value_t = 0.05)]
    val: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// linear | shallow | deep | gender
    #[arg(long)]
    arch: String,
    /// body | face | both
    #[arg(long, default_value = "both")]
    features: String,
    /// all | female | male
    #[arg(long, default_value = "all")]
    gender: String,
    /// Training example stream.
    #[arg(long)]
    train: PathBuf,
    /// Validation example stream (early stopping).
    #[arg(long)]
    val: PathBuf,
    /// Optional pixel crops matching the examples.
    #[arg(long)]
    crops: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    crops: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Accept a model built under a different config hash.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BaselineArgs {
    /// constant | gendermean | posenet-offset
    #[arg(long)]
    kind: String,
    /// Train examples the baseline is fitted on.
    #[arg(long)]
    train: PathBuf,
    /// Examples to predict for.
    #[arg(long)]
    examples: PathBuf,
    /// Raw external predictions (example_id, raw_height_cm) for
    /// posenet-offset.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Fit the offset with the median instead of the mean.
    #[arg(long)]
    median: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Predictions CSV (example_id, prediction_cm) as an alternative to a
    /// model file.
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    crops: Option<PathBuf>,
    /// splits.csv restricting evaluation to one split.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    histogram_max_cm: f64,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    crops: Option<PathBuf>,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    crops: Option<PathBuf>,
    #[arg(long)]
    splits: PathBuf,
    /// Comma-separated ascending training-set sizes.
    #[arg(long)]
    sizes: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Consume inputs produced under a different config hash.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_examples_rows(examples: &PathBuf, crops: Option<&PathBuf>) -> Result<Vec<LabeledBundle>> {
    load_rows(examples, crops.map(|p| p.as_path()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { what } => match what {
            SynthCommand::Population { config, preset, n } => {
                let mut pc = match (&config, preset.as_deref()) {
                    (Some(path), _) => RunConfig::load(path)?.population,
                    (None, Some("linear")) => PopulationConfig::linear_signal(10_000, 0),
                    (None, Some("nonlinear")) | (None, None) => {
                        PopulationConfig::nonlinear_split(10_000, 0)
                    }
                    (None, Some("no-signal")) => PopulationConfig::no_signal(10_000, 0),
                    (None, Some(other)) => {
                        return Err(Error::SpecError(format!("unknown preset '{other}'")))
                    }
                };
                if let Some(n) = n {
                    pc.n = n;
                }
                if let Some(seed) = cli.seed {
                    pc.seed = seed;
                }
                let data = generate_population(&pc)?;
                std::fs::create_dir_all(&cli.out_dir)?;
                write_jsonl(&cli.out_dir.join("subjects.jsonl"), &data.subjects)?;
                write_jsonl(&cli.out_dir.join("detections.jsonl"), &data.detection_sets)?;
                write_jsonl(&cli.out_dir.join("poses.jsonl"), &data.poses)?;
                write_jsonl(&cli.out_dir.join("truth.jsonl"), &data.truth)?;
                write_jsonl(&cli.out_dir.join("ground.jsonl"), &data.ground)?;
                if pc.render_crops {
                    write_jsonl(&cli.out_dir.join("crops.jsonl"), &data.crops)?;
                }
                println!("wrote {} subjects to {}", data.subjects.len(), cli.out_dir.display());
            }
            SynthCommand::Identities { config, preset, n_images } => {
                let mut ic = match (&config, preset.as_deref()) {
                    (Some(path), _) => RunConfig::load(path)?.identity,
                    (None, Some("imdb-like")) | (None, None) => IdentityConfig::imdb_like(0),
                    (None, Some(other)) => {
                        return Err(Error::SpecError(format!("unknown preset '{other}'")))
                    }
                };
                if let Some(n) = n_images {
                    ic.n_images = n;
                }
                if let Some(seed) = cli.seed {
                    ic.seed = seed;
                }
                let data = generate_identity_benchmark(&ic)?;
                std::fs::create_dir_all(&cli.out_dir)?;
                write_jsonl(&cli.out_dir.join("subjects.jsonl"), &data.subjects)?;
                write_jsonl(&cli.out_dir.join("detections.jsonl"), &data.detection_sets)?;
                write_jsonl(&cli.out_dir.join("truth.jsonl"), &data.truth)?;
                println!(
                    "wrote {} images over {} subjects to {}",
                    data.detection_sets.len(),
                    data.subjects.len(),
                    cli.out_dir.display()
                );
            }
        },
        Command::Propagate(args) => {
            let subjects: Vec<Subject> = read_jsonl(&args.subjects)?;
            let sets: Vec<DetectionSet> = read_jsonl(&args.detections)?;
            let store = SubjectStore::from_subjects(subjects)?;
            let assigned = propagate_all(&sets, &store, args.tau, cli.threads)?;
            write_jsonl(&args.out, &assigned)?;
            println!("assigned {} detections across {} images", assigned.len(), sets.len());
        }
        Command::Audit(args) => {
            let assigned: Vec<AssignedDetection> = read_jsonl(&args.assignments)?;
            let truth: Vec<TruthRecord> = read_jsonl(&args.truth)?;
            let report = audit_assignments(&assigned, &truth);
            write_audit_csv(&args.out, &report)?;
            println!(
                "labels {} assigned {} wrong {} precision {} recall {}",
                report.n_labels,
                report.n_assigned,
                report.n_wrong,
                report.precision.map_or("NaN".into(), fmt_f64),
                fmt_f64(report.recall)
            );
        }
        Command::Preprocess(args) => {
            let assigned: Vec<AssignedDetection> = read_jsonl(&args.assignments)?;
            let poses: Vec<PoseRecord> = read_jsonl(&args.poses)?;
            let subjects: Vec<Subject> = read_jsonl(&args.subjects)?;
            let store = SubjectStore::from_subjects(subjects)?;
            let config = PreprocessConfig {
                margin: args.margin,
                min_crop_px: args.min_crop_px,
                ..Default::default()
            };
            let (examples, log) = build_examples(&assigned, &poses, &store, &config)?;
            lint_examples(&examples, &config)?;
            write_jsonl(&args.out, &examples)?;
            if let Some(report) = &args.report {
                log.write_csv(report)?;
            }
            println!("kept {} examples, rejected {}", examples.len(), log.total());
        }
        Command::Split(args) => {
            let examples: Vec<AnnotatedExample> = read_jsonl(&args.examples)?;
            let spec = SplitSpec {
                fractions: (args.train, args.test, args.val),
                mode: SplitMode::parse(&args.mode)?,
                seed: cli.seed.unwrap_or(0),
            };
            let splits = split_dataset(&examples, &spec)?;
            write_splits_csv(&args.out, &splits)?;
            println!(
                "train {} test {} val {}",
                splits.train.len(),
                splits.test.len(),
                splits.val.len()
            );
        }
        Command::Train(args) => {
            let mut config = RunConfig::default();
            config.train.arch = args.arch;
            config.train.features = args.features;
            config.train.gender = args.gender;
            if let Some(lr) = args.lr {
                config.train.lr = lr;
            }
            if let Some(epochs) = args.epochs {
                config.train.max_epochs = epochs;
            }
            if let Some(width) = args.width {
                config.train.width = width;
            }
            let train_rows = gender_filter(
                load_examples_rows(&args.train, args.crops.as_ref())?,
                &config.train.gender,
            )?;
            let val_rows = gender_filter(
                load_examples_rows(&args.val, args.crops.as_ref())?,
                &config.train.gender,
            )?;
            let seed = cli.seed.unwrap_or(0);
            let (ckpt, history) = train_from_config(&config, &train_rows, &val_rows, seed)?;
            ckpt.save(&args.out)?;
            match &history {
                Some(h) => println!(
                    "trained {} epochs (best {}), final val metric {}",
                    h.train_loss.len(),
                    h.best_epoch,
                    fmt_f64(*h.val_mae.last().unwrap_or(&f64::NAN))
                ),
                None => println!("fitted closed-form model"),
            }
        }
        Command::Predict(args) => {
            let ckpt = Checkpoint::load(&args.model)?;
            check_meta(&args.model, &ckpt.config_hash, args.force)?;
            let rows = load_examples_rows(&args.examples, args.crops.as_ref())?;
            let mut w = CsvWriter::create(&args.out, &["example_id", "prediction_cm"])?;
            for row in &rows {
                let pred = ckpt.predict(&row.bundle)?;
                w.row(&[row.example_id.clone(), fmt_f64(pred)])?;
            }
            w.finish()?;
            println!("predicted {} examples", rows.len());
        }
        Command::Baseline(args) => {
            let train_rows = load_examples_rows(&args.train, None)?;
            let eval_rows = load_examples_rows(&args.examples, None)?;
            let mut w = CsvWriter::create(&args.out, &["example_id", "prediction_cm"])?;
            match args.kind.as_str() {
                "constant" => {
                    let heights: Vec<f64> = train_rows.iter().map(|r| r.height_cm).collect();
                    let model = fit_constant_mean(&heights)?;
                    for row in &eval_rows {
                        w.row(&[row.example_id.clone(), fmt_f64(model.predict())])?;
                    }
                    println!("constant mean {}", fmt_f64(model.mean_cm));
                }
                "gendermean" => {
                    let pairs: Vec<(f64, Gender)> =
                        train_rows.iter().map(|r| (r.height_cm, r.gender)).collect();
                    let model = fit_gender_mean(&pairs)?;
                    if model.fallback {
                        eprintln!(
                            "warning: a gender is absent from the train split; using the overall mean for it"
                        );
                    }
                    for row in &eval_rows {
                        w.row(&[row.example_id.clone(), fmt_f64(model.predict(row.gender))])?;
                    }
                    println!("female {} male {}", fmt_f64(model.female_cm), fmt_f64(model.male_cm));
                }
                "posenet-offset" => {
                    let raw_path = args
                        .raw
                        .as_ref()
                        .ok_or(Error::SpecError("posenet-offset needs --raw".into()))?;
                    let (header, rows) = read_csv(raw_path)?;
                    if header != ["example_id", "raw_height_cm"] {
                        return Err(Error::Parse(format!("unexpected raw columns {header:?}")));
                    }
                    let mut raw_map = std::collections::BTreeMap::new();
                    for row in &rows {
                        let v: f64 = row[1]
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad raw height '{}'", row[1])))?;
                        raw_map.insert(row[0].clone(), v);
                    }
                    let mut raw = Vec::new();
                    let mut truth = Vec::new();
                    for r in &train_rows {
                        if let Some(v) = raw_map.get(&r.example_id) {
                            raw.push(*v);
                            truth.push(r.height_cm);
                        }
                    }
                    let fit = if args.median { OffsetFit::Median } else { OffsetFit::Mean };
                    let model = calibrate_posenet_offset(&raw, &truth, fit)?;
                    for row in &eval_rows {
                        if let Some(v) = raw_map.get(&row.example_id) {
                            w.row(&[row.example_id.clone(), fmt_f64(model.predict(*v))])?;
                        }
                    }
                    println!("offset {} cm over {} pairs", fmt_f64(model.offset_cm), raw.len());
                }
                other => return Err(Error::SpecError(format!("unknown baseline '{other}'"))),
            }
            w.finish()?;
        }
        Command::Evaluate(args) => {
            let rows = load_examples_rows(&args.examples, args.crops.as_ref())?;
            let chosen: Vec<LabeledBundle> = match &args.splits {
                Some(path) => {
                    let splits = read_splits_csv(path)?;
                    let (train, test, val) = splits.select(&rows);
                    let picked = match args.split.as_str() {
                        "train" => train,
                        "test" => test,
                        "val" => val,
                        other => return Err(Error::SpecError(format!("unknown split '{other}'"))),
                    };
                    picked.into_iter().cloned().collect()
                }
                None => rows,
            };
            if chosen.is_empty() {
                return Err(Error::EmptyInput("evaluation split"));
            }
            let preds: Vec<f64> = match (&args.model, &args.preds) {
                (Some(model), None) => {
                    let ckpt = Checkpoint::load(model)?;
                    chosen.iter().map(|r| ckpt.predict(&r.bundle)).collect::<Result<_>>()?
                }
                (None, Some(preds)) => {
                    let (header, rows) = read_csv(preds)?;
                    if header != ["example_id", "prediction_cm"] {
                        return Err(Error::Parse(format!("unexpected columns {header:?}")));
                    }
                    let map: std::collections::BTreeMap<String, f64> = rows
                        .iter()
                        .map(|r| {
                            Ok((
                                r[0].clone(),
                                r[1].parse().map_err(|_| {
                                    Error::Parse(format!("bad prediction '{}'", r[1]))
                                })?,
                            ))
                        })
                        .collect::<Result<_>>()?;
                    chosen
                        .iter()
                        .map(|r| {
                            map.get(&r.example_id).copied().ok_or_else(|| {
                                Error::SpecError(format!("no prediction for {}", r.example_id))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                _ => {
                    return Err(Error::SpecError(
                        "evaluate needs exactly one of --model or --preds".into(),
                    ))
                }
            };
            let labels: Vec<f64> = chosen.iter().map(|r| r.height_cm).collect();
            let genders: Vec<Gender> = chosen.iter().map(|r| r.gender).collect();
            let report = build_report(&preds, &labels, &genders, args.histogram_max_cm)?;
            write_report_csv(&args.out, &report)?;
            if let Some(path) = &args.histogram {
                write_histogram_csv(path, &report.histogram)?;
            }
            println!(
                "all {} ({}), female {} ({}), male {} ({})",
                fmt_f64(report.all.mae),
                report.all.n,
                fmt_f64(report.female.mae),
                report.female.n,
                fmt_f64(report.male.mae),
                report.male.n
            );
        }
        Command::Ablation(args) => {
            let config = RunConfig::default();
            let rows = load_examples_rows(&args.examples, args.crops.as_ref())?;
            let splits = read_splits_csv(&args.splits)?;
            let (train, test, val) = splits.select(&rows);
            let train: Vec<LabeledBundle> = train.into_iter().cloned().collect();
            let test: Vec<LabeledBundle> = test.into_iter().cloned().collect();
            let val: Vec<LabeledBundle> = val.into_iter().cloned().collect();
            let seed = cli.seed.unwrap_or(0);
            let cells = run_ablation_grid(
                &train,
                &val,
                &test,
                &config.regressor_spec(seed)?,
                &config.train_config(seed),
                config.train.ridge,
            )?;
            let mut w = CsvWriter::create(&args.out, &["features", "arch", "mae"])?;
            for cell in &cells {
                w.row(&[
                    feature_name(cell.features).to_string(),
                    cell.arch.as_str().to_string(),
                    fmt_f64(cell.mae),
                ])?;
                println!(
                    "{:>4} / {:<7} {}",
                    feature_name(cell.features),
                    cell.arch.as_str(),
                    fmt_f64(cell.mae)
                );
            }
            w.finish()?;
        }
        Command::Curve(args) => {
            let config = RunConfig::default();
            let sizes: Vec<usize> = args
                .sizes
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad size '{s}'"))))
                .collect::<Result<_>>()?;
            let rows = load_examples_rows(&args.examples, args.crops.as_ref())?;
            let splits = read_splits_csv(&args.splits)?;
            let (train, test, val) = splits.select(&rows);
            let train: Vec<LabeledBundle> = train.into_iter().cloned().collect();
            let test: Vec<LabeledBundle> = test.into_iter().cloned().collect();
            let val: Vec<LabeledBundle> = val.into_iter().cloned().collect();
            let seed = cli.seed.unwrap_or(0);
            let (points, reference) = dataset_size_curve(
                &train,
                &val,
                &test,
                &sizes,
                &config.regressor_spec(seed)?,
                &config.train_config(seed),
            )?;
            // Rows with size 0 carry the GenderMean reference MAE.
            let mut w = CsvWriter::create(&args.out, &["size", "gender", "mae"])?;
            for gender in [Gender::Female, Gender::Male] {
                let subset: Vec<&LabeledBundle> =
                    test.iter().filter(|r| r.gender == gender).collect();
                if subset.is_empty() {
                    continue;
                }
                let mae = subset
                    .iter()
                    .map(|r| (r.height_cm - reference.predict(gender)).abs())
                    .sum::<f64>()
                    / subset.len() as f64;
                w.row(&["0".into(), gender.as_str().into(), fmt_f64(mae)])?;
            }
            for p in &points {
                w.row(&[p.size.to_string(), p.gender.as_str().into(), fmt_f64(p.mae)])?;
                println!("size {:>6} {:<7} {}", p.size, p.gender.as_str(), fmt_f64(p.mae));
            }
            w.finish()?;
        }
        Command::Pipeline(args) => {
            let mut config = RunConfig::load(&args.config)?;
            if let Some(seed) = cli.seed {
                config.pipeline.seed = seed;
            }
            if cli.threads > 1 {
                config.pipeline.threads = cli.threads;
            }
            let manifest = run_pipeline(&config, &cli.out_dir, args.force)?;
            println!(
                "completed {} stages, {} outputs, config {}",
                manifest.stages.len(),
                manifest.outputs.len(),
                manifest.config_hash
            );
        }
    }
    Ok(())
}
