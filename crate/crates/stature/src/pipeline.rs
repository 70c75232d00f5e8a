//! Run configuration, stage orchestration and reproducible manifests.
//!
//! A run is described by one TOML file with sections mirroring the library
//! modules. Stages execute in the declared order inside an output
//! directory; every output file gets a `.meta` sidecar carrying the config
//! hash that produced it, and downstream stages refuse mismatched inputs
//! unless forced. The manifest (config hash, per-stage seeds, input and
//! output digests) makes two runs comparable byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assignment::{
    audit_assignments, flatten_assignment, propagate_labels, AssignedDetection, TruthRecord,
};
use crate::baselines::fit_gender_mean;
use crate::error::{Error, Result};
use crate::evaluation::{build_report, split_dataset, EvalReport, SplitMode, SplitSpec, Splits};
use crate::io::{fmt_f64, read_jsonl, write_jsonl, CsvWriter};
use crate::model::{
    AnnotatedExample, DetectionSet, Gender, PoseRecord, Subject, SubjectStore,
};
use crate::preprocess::{build_examples, PreprocessConfig};
use crate::regressors::{
    build_deep_two_stream, build_shallow, index_crops, rows_from_examples, train_gender_pred,
    train_regressor, Checkpoint, CheckpointModel, CropRecord, DataDims, FeatureSelect,
    LabeledBundle, LinearModel, RegressorSpec, StreamSource, TrainConfig,
};
use crate::rng::{fnv1a64_hex, Rng};
use crate::synth::{generate_identity_benchmark, generate_population, IdentityConfig, PopulationConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub stages: Vec<String>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            stages: vec![
                "synth-population".into(),
                "propagate".into(),
                "audit".into(),
                "preprocess".into(),
                "split".into(),
                "train".into(),
                "evaluate".into(),
            ],
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignmentSection {
    pub tau: f64,
}

impl Default for AssignmentSection {
    fn default() -> Self {
        AssignmentSection { tau: crate::assignment::DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub train: f64,
    pub test: f64,
    pub val: f64,
    pub mode: String,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train: 0.80, test: 0.15, val: 0.05, mode: "by-subject".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub arch: String,
    pub features: String,
    /// all | female | male — restricts the training rows.
    pub gender: String,
    pub ridge: f64,
    pub width: usize,
    pub stream_hidden: usize,
    pub stream_embed: usize,
    pub fusion_hidden: usize,
    pub body_source: String,
    pub face_source: String,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            arch: "shallow".into(),
            features: "both".into(),
            gender: "all".into(),
            ridge: 1e-6,
            width: 64,
            stream_hidden: 48,
            stream_embed: 24,
            fusion_hidden: 48,
            body_source: "keypoints".into(),
            face_source: "face_pixels".into(),
            lr: 0.002,
            lr_decay: 0.97,
            batch_size: 64,
            max_epochs: 80,
            patience: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    pub split: String,
    pub histogram_max_cm: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { split: "test".into(), histogram_max_cm: 30.0 }
    }
}

/// One TOML file with a section per module; unknown keys are rejected by
/// their absence here, and all defaults live in the `Default` impls.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub pipeline: PipelineSection,
    pub population: PopulationConfig,
    pub identity: IdentityConfig,
    pub assignment: AssignmentSection,
    pub preprocess: PreprocessConfig,
    pub split: SplitSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hash of the parsed configuration (formatting and comments in the
    /// TOML do not change it).
    pub fn hash(&self) -> String {
        fnv1a64_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            lr_decay: self.train.lr_decay,
            momentum: 0.9,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed,
        }
    }

    pub fn regressor_spec(&self, seed: u64) -> Result<RegressorSpec> {
        Ok(RegressorSpec {
            shallow_hidden: vec![self.train.width; 3],
            stream_hidden: self.train.stream_hidden,
            stream_embed: self.train.stream_embed,
            fusion_hidden: self.train.fusion_hidden,
            body_source: parse_source(&self.train.body_source)?,
            face_source: parse_source(&self.train.face_source)?,
            seed,
            ..Default::default()
        })
    }
}

pub fn parse_source(s: &str) -> Result<StreamSource> {
    match s {
        "keypoints" => Ok(StreamSource::Keypoints),
        "face_features" => Ok(StreamSource::FaceFeatures),
        "face_pixels" => Ok(StreamSource::FacePixels),
        "body_pixels" => Ok(StreamSource::BodyPixels),
        other => Err(Error::SpecError(format!("unknown stream source '{other}'"))),
    }
}

/// Record of one completed run: what produced what, under which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub stages: Vec<String>,
    /// Stage name to the seed it derived from the pipeline seed.
    pub seeds: BTreeMap<String, u64>,
    /// Relative input path to content digest.
    pub inputs: BTreeMap<String, String>,
    /// Relative output path to content digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(fnv1a64_hex(&bytes))
}

/// Writes `<path>.meta` with the config hash that produced `path`.
pub fn write_meta(path: &Path, config_hash: &str) -> Result<()> {
    let meta = path.with_extension(format!(
        "{}.meta",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(meta, format!("{config_hash}\n"))?;
    Ok(())
}

/// Refuses to consume a file stamped with a different configuration,
/// unless `force` is set. Files without a sidecar pass.
pub fn check_meta(path: &Path, config_hash: &str, force: bool) -> Result<()> {
    let meta = path.with_extension(format!(
        "{}.meta",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    if !meta.exists() || force {
        return Ok(());
    }
    let found = std::fs::read_to_string(&meta)?.trim().to_string();
    if found != config_hash {
        return Err(Error::ConfigHashMismatch {
            path: path.display().to_string(),
            expected: config_hash.to_string(),
            found,
        });
    }
    Ok(())
}

struct RunContext<'a> {
    config: &'a RunConfig,
    out_dir: &'a Path,
    config_hash: String,
    force: bool,
    manifest: Manifest,
}

impl<'a> RunContext<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn record_output(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        write_meta(&path, &self.config_hash)?;
        self.manifest.outputs.insert(name.to_string(), file_digest(&path)?);
        Ok(())
    }

    fn open_input(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::Parse(format!("missing input file {}", path.display())));
        }
        check_meta(&path, &self.config_hash, self.force)?;
        Ok(path)
    }

    fn stage_seed(&mut self, stage: &str) -> u64 {
        let seed = Rng::new(self.config.pipeline.seed).derive(stage).next_u64();
        self.manifest.seeds.insert(stage.to_string(), seed);
        seed
    }
}

/// Splits the detection sets across `threads` workers; results come back in
/// input order, so the thread count never changes the output.
pub fn propagate_all(
    sets: &[DetectionSet],
    store: &SubjectStore,
    tau: f64,
    threads: usize,
) -> Result<Vec<AssignedDetection>> {
    let mut seen = std::collections::BTreeSet::new();
    for set in sets {
        if !seen.insert(set.image_id.as_str()) {
            return Err(Error::SpecError(format!("duplicate image id '{}'", set.image_id)));
        }
    }
    let threads = threads.max(1).min(sets.len().max(1));
    let results: Vec<Result<Vec<AssignedDetection>>> = if threads <= 1 {
        sets.iter()
            .map(|set| propagate_labels(set, store, tau).map(|a| flatten_assignment(&a, set)))
            .collect()
    } else {
        let chunk = sets.len().div_ceil(threads);
        let mut out: Vec<Option<Result<Vec<AssignedDetection>>>> =
            (0..sets.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (start, piece) in sets.chunks(chunk).enumerate().map(|(i, c)| (i * chunk, c)) {
                handles.push((start, scope.spawn(move || {
                    piece
                        .iter()
                        .map(|set| {
                            propagate_labels(set, store, tau).map(|a| flatten_assignment(&a, set))
                        })
                        .collect::<Vec<_>>()
                })));
            }
            for (start, handle) in handles {
                for (offset, r) in handle.join().expect("worker panicked").into_iter().enumerate()
                {
                    out[start + offset] = Some(r);
                }
            }
        });
        out.into_iter().map(|r| r.expect("all slots filled")).collect()
    };
    let mut flat = Vec::new();
    for r in results {
        flat.extend(r?);
    }
    Ok(flat)
}

fn stage_synth_population(ctx: &mut RunContext) -> Result<()> {
    let seed = ctx.stage_seed("synth-population");
    let mut config = ctx.config.population.clone();
    config.seed = seed;
    let data = generate_population(&config)?;
    write_jsonl(&ctx.path("subjects.jsonl"), &data.subjects)?;
    write_jsonl(&ctx.path("detections.jsonl"), &data.detection_sets)?;
    write_jsonl(&ctx.path("poses.jsonl"), &data.poses)?;
    write_jsonl(&ctx.path("truth.jsonl"), &data.truth)?;
    write_jsonl(&ctx.path("ground.jsonl"), &data.ground)?;
    ctx.record_output("subjects.jsonl")?;
    ctx.record_output("detections.jsonl")?;
    ctx.record_output("poses.jsonl")?;
    ctx.record_output("truth.jsonl")?;
    ctx.record_output("ground.jsonl")?;
    if config.render_crops {
        write_jsonl(&ctx.path("crops.jsonl"), &data.crops)?;
        ctx.record_output("crops.jsonl")?;
    }
    Ok(())
}

fn stage_synth_identities(ctx: &mut RunContext) -> Result<()> {
    let seed = ctx.stage_seed("synth-identities");
    let mut config = ctx.config.identity.clone();
    config.seed = seed;
    let data = generate_identity_benchmark(&config)?;
    write_jsonl(&ctx.path("subjects.jsonl"), &data.subjects)?;
    write_jsonl(&ctx.path("detections.jsonl"), &data.detection_sets)?;
    write_jsonl(&ctx.path("truth.jsonl"), &data.truth)?;
    ctx.record_output("subjects.jsonl")?;
    ctx.record_output("detections.jsonl")?;
    ctx.record_output("truth.jsonl")?;
    Ok(())
}

fn stage_propagate(ctx: &mut RunContext) -> Result<()> {
    let subjects: Vec<Subject> = read_jsonl(&ctx.open_input("subjects.jsonl")?)?;
    let sets: Vec<DetectionSet> = read_jsonl(&ctx.open_input("detections.jsonl")?)?;
    let store = SubjectStore::from_subjects(subjects)?;
    let assigned =
        propagate_all(&sets, &store, ctx.config.assignment.tau, ctx.config.pipeline.threads)?;
    write_jsonl(&ctx.path("assignments.jsonl"), &assigned)?;
    ctx.record_output("assignments.jsonl")
}

pub fn write_audit_csv(path: &Path, report: &crate::assignment::AuditReport) -> Result<()> {
    let mut w = CsvWriter::create(path, &["n_labels", "n_assigned", "n_wrong", "precision", "recall"])?;
    w.row(&[
        report.n_labels.to_string(),
        report.n_assigned.to_string(),
        report.n_wrong.to_string(),
        report.precision.map_or("NaN".to_string(), fmt_f64),
        fmt_f64(report.recall),
    ])?;
    w.finish()
}

fn stage_audit(ctx: &mut RunContext) -> Result<()> {
    let assigned: Vec<AssignedDetection> = read_jsonl(&ctx.open_input("assignments.jsonl")?)?;
    let truth: Vec<TruthRecord> = read_jsonl(&ctx.open_input("truth.jsonl")?)?;
    let report = audit_assignments(&assigned, &truth);
    write_audit_csv(&ctx.path("audit.csv"), &report)?;
    ctx.record_output("audit.csv")
}

fn stage_preprocess(ctx: &mut RunContext) -> Result<()> {
    let assigned: Vec<AssignedDetection> = read_jsonl(&ctx.open_input("assignments.jsonl")?)?;
    let poses: Vec<PoseRecord> = read_jsonl(&ctx.open_input("poses.jsonl")?)?;
    let subjects: Vec<Subject> = read_jsonl(&ctx.open_input("subjects.jsonl")?)?;
    let store = SubjectStore::from_subjects(subjects)?;
    let (examples, log) = build_examples(&assigned, &poses, &store, &ctx.config.preprocess)?;
    crate::preprocess::lint_examples(&examples, &ctx.config.preprocess)?;
    write_jsonl(&ctx.path("examples.jsonl"), &examples)?;
    log.write_csv(&ctx.path("rejections.csv"))?;
    ctx.record_output("examples.jsonl")?;
    ctx.record_output("rejections.csv")
}

pub fn write_splits_csv(path: &Path, splits: &Splits) -> Result<()> {
    let mut w = CsvWriter::create(path, &["example_id", "split"])?;
    for (name, ids) in [("train", &splits.train), ("test", &splits.test), ("val", &splits.val)] {
        for id in ids.iter() {
            w.row(&[id.clone(), name.to_string()])?;
        }
    }
    w.finish()
}

pub fn read_splits_csv(path: &Path) -> Result<Splits> {
    let (header, rows) = crate::io::read_csv(path)?;
    if header != ["example_id", "split"] {
        return Err(Error::Parse(format!("{}: unexpected split columns {header:?}", path.display())));
    }
    let mut splits = Splits { train: Vec::new(), test: Vec::new(), val: Vec::new() };
    for row in rows {
        match row[1].as_str() {
            "train" => splits.train.push(row[0].clone()),
            "test" => splits.test.push(row[0].clone()),
            "val" => splits.val.push(row[0].clone()),
            other => return Err(Error::Parse(format!("unknown split '{other}'"))),
        }
    }
    Ok(splits)
}

fn stage_split(ctx: &mut RunContext) -> Result<()> {
    let seed = ctx.stage_seed("split");
    let examples: Vec<AnnotatedExample> = read_jsonl(&ctx.open_input("examples.jsonl")?)?;
    let spec = SplitSpec {
        fractions: (ctx.config.split.train, ctx.config.split.test, ctx.config.split.val),
        mode: SplitMode::parse(&ctx.config.split.mode)?,
        seed,
    };
    let splits = split_dataset(&examples, &spec)?;
    write_splits_csv(&ctx.path("splits.csv"), &splits)?;
    ctx.record_output("splits.csv")
}

/// Filters rows by the configured gender restriction.
pub fn gender_filter(rows: Vec<LabeledBundle>, which: &str) -> Result<Vec<LabeledBundle>> {
    match which {
        "all" => Ok(rows),
        "female" => Ok(rows.into_iter().filter(|r| r.gender == Gender::Female).collect()),
        "male" => Ok(rows.into_iter().filter(|r| r.gender == Gender::Male).collect()),
        other => Err(Error::SpecError(format!("unknown gender filter '{other}'"))),
    }
}

/// Loads example rows joined with crops (when present on disk).
pub fn load_rows(
    examples_path: &Path,
    crops_path: Option<&Path>,
) -> Result<Vec<LabeledBundle>> {
    let examples: Vec<AnnotatedExample> = read_jsonl(examples_path)?;
    let crops = match crops_path {
        Some(p) if p.exists() => Some(index_crops(read_jsonl::<CropRecord>(p)?)),
        _ => None,
    };
    Ok(rows_from_examples(&examples, crops.as_ref()))
}

/// Trains the configured model and returns the checkpoint plus history.
pub fn train_from_config(
    config: &RunConfig,
    train_rows: &[LabeledBundle],
    val_rows: &[LabeledBundle],
    seed: u64,
) -> Result<(Checkpoint, Option<crate::regressors::TrainHistory>)> {
    let features = FeatureSelect::parse(&config.train.features)?;
    let spec = config.regressor_spec(seed)?;
    let cfg = config.train_config(seed);
    let model = match config.train.arch.as_str() {
        "linear" => {
            let linear = LinearModel::fit(train_rows, features, config.train.ridge)?;
            return Ok((
                Checkpoint { config_hash: config.hash(), model: CheckpointModel::Linear(linear) },
                None,
            ));
        }
        "shallow" => {
            let dims = DataDims::from_rows(train_rows)?;
            build_shallow(&spec, &dims, features)?
        }
        "deep" => {
            let dims = DataDims::from_rows(train_rows)?;
            build_deep_two_stream(&spec, &dims, features)?
        }
        "gender" => {
            let dims = DataDims::from_rows(train_rows)?;
            let net = build_deep_two_stream(&spec, &dims, features)?;
            let (predictor, history, _skipped) =
                train_gender_pred(net, train_rows, val_rows, &cfg)?;
            return Ok((
                Checkpoint {
                    config_hash: config.hash(),
                    model: CheckpointModel::GenderPred(predictor),
                },
                Some(history),
            ));
        }
        other => return Err(Error::SpecError(format!("unknown arch '{other}'"))),
    };
    let (trained, history) = train_regressor(model, train_rows, val_rows, &cfg)?;
    Ok((
        Checkpoint { config_hash: config.hash(), model: CheckpointModel::Net(trained) },
        Some(history),
    ))
}

fn stage_train(ctx: &mut RunContext) -> Result<()> {
    let seed = ctx.stage_seed("train");
    let examples_path = ctx.open_input("examples.jsonl")?;
    let crops_path = ctx.path("crops.jsonl");
    let rows = load_rows(&examples_path, Some(&crops_path))?;
    let splits = read_splits_csv(&ctx.open_input("splits.csv")?)?;
    let (train, _, val) = splits.select(&rows);
    let train: Vec<LabeledBundle> = train.into_iter().cloned().collect();
    let val: Vec<LabeledBundle> = val.into_iter().cloned().collect();
    let train = gender_filter(train, &ctx.config.train.gender)?;
    let val = gender_filter(val, &ctx.config.train.gender)?;
    let (ckpt, history) = train_from_config(ctx.config, &train, &val, seed)?;
    ckpt.save(&ctx.path("model.ckpt"))?;
    ctx.record_output("model.ckpt")?;
    if let Some(h) = history {
        std::fs::write(ctx.path("history.json"), serde_json::to_string_pretty(&h)?)?;
        ctx.record_output("history.json")?;
    }
    Ok(())
}

pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = CsvWriter::create(path, &["group", "n", "mae"])?;
    for (name, stat) in [
        ("all", report.all),
        ("female", report.female),
        ("male", report.male),
        ("unknown", report.unknown),
    ] {
        w.row(&[name.to_string(), stat.n.to_string(), fmt_f64(stat.mae)])?;
    }
    w.finish()
}

pub fn write_histogram_csv(path: &Path, histogram: &[(f64, f64)]) -> Result<()> {
    let mut w = CsvWriter::create(path, &["threshold_cm", "fraction"])?;
    for (t, f) in histogram {
        w.row(&[fmt_f64(*t), fmt_f64(*f)])?;
    }
    w.finish()
}

fn stage_evaluate(ctx: &mut RunContext) -> Result<()> {
    let examples_path = ctx.open_input("examples.jsonl")?;
    let crops_path = ctx.path("crops.jsonl");
    let rows = load_rows(&examples_path, Some(&crops_path))?;
    let splits = read_splits_csv(&ctx.open_input("splits.csv")?)?;
    let (train, test, val) = splits.select(&rows);
    let chosen = match ctx.config.evaluate.split.as_str() {
        "train" => train.clone(),
        "test" => test,
        "val" => val,
        other => return Err(Error::SpecError(format!("unknown split '{other}'"))),
    };
    if chosen.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let ckpt = Checkpoint::load(&ctx.open_input("model.ckpt")?)?;
    let mut preds = Vec::with_capacity(chosen.len());
    let mut labels = Vec::with_capacity(chosen.len());
    let mut genders = Vec::with_capacity(chosen.len());
    for row in &chosen {
        preds.push(ckpt.predict(&row.bundle)?);
        labels.push(row.height_cm);
        genders.push(row.gender);
    }
    let report = build_report(&preds, &labels, &genders, ctx.config.evaluate.histogram_max_cm)?;
    write_report_csv(&ctx.path("report.csv"), &report)?;
    write_histogram_csv(&ctx.path("histogram.csv"), &report.histogram)?;
    ctx.record_output("report.csv")?;
    ctx.record_output("histogram.csv")?;
    // GenderMean reference for context, from the train split.
    let pairs: Vec<(f64, Gender)> = train.iter().map(|r| (r.height_cm, r.gender)).collect();
    if let Ok(reference) = fit_gender_mean(&pairs) {
        let ref_preds: Vec<f64> = chosen.iter().map(|r| reference.predict(r.gender)).collect();
        let ref_report =
            build_report(&ref_preds, &labels, &genders, ctx.config.evaluate.histogram_max_cm)?;
        write_report_csv(&ctx.path("report_gendermean.csv"), &ref_report)?;
        ctx.record_output("report_gendermean.csv")?;
    }
    Ok(())
}

/// Executes the configured stages in order. On a stage failure every file
/// written so far is renamed with a `.quarantine` suffix and the error
/// names the stage.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path, force: bool) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut ctx = RunContext {
        config,
        out_dir,
        config_hash: config.hash(),
        force,
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            stages: config.pipeline.stages.clone(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        },
    };
    for stage in &config.pipeline.stages {
        let result = match stage.as_str() {
            "synth-population" => stage_synth_population(&mut ctx),
            "synth-identities" => stage_synth_identities(&mut ctx),
            "propagate" => stage_propagate(&mut ctx),
            "audit" => stage_audit(&mut ctx),
            "preprocess" => stage_preprocess(&mut ctx),
            "split" => stage_split(&mut ctx),
            "train" => stage_train(&mut ctx),
            "evaluate" => stage_evaluate(&mut ctx),
            other => Err(Error::SpecError(format!("unknown stage '{other}'"))),
        };
        if let Err(cause) = result {
            for name in ctx.manifest.outputs.keys() {
                let path = ctx.out_dir.join(name);
                let _ = std::fs::rename(&path, path.with_extension("quarantine"));
            }
            return Err(Error::StageFailure { stage: stage.clone(), cause: Box::new(cause) });
        }
    }
    let manifest_json = serde_json::to_string_pretty(&ctx.manifest)?;
    std::fs::write(out_dir.join("manifest.json"), manifest_json)?;
    Ok(ctx.manifest)
}
