//! The two-stream regressor: a keypoint MLP for the body channel and a
//! small conv stack on the face crop, fused by two dense layers and trained
//! end to end. Single-stream variants show what each channel is worth.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::evaluation::{mae, nested_subsample_order};
use stature::model::SubjectStore;
use stature::preprocess::{build_examples, PreprocessConfig};
use stature::regressors::*;
use stature::synth::{generate_population, PopulationConfig};

fn eval(model: &NetModel, rows: &[LabeledBundle]) -> stature::Result<f64> {
    let bundles: Vec<&FeatureBundle> = rows.iter().map(|r| &r.bundle).collect();
    let preds = model.predict_batch(&bundles)?;
    let labels: Vec<f64> = rows.iter().map(|r| r.height_cm).collect();
    mae(&preds, &labels)
}

fn main() -> stature::Result<()> {
    let data = generate_population(&PopulationConfig::nonlinear_split(6000, 31))?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;
    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        assigned.extend(flatten_assignment(&propagate_labels(set, &store, 0.9)?, set));
    }
    let (examples, _) = build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default())?;
    let crops = index_crops(data.crops);
    let rows = rows_from_examples(&examples, Some(&crops));

    let order = nested_subsample_order(rows.len(), 8);
    let n = rows.len();
    let (a, b) = ((0.8 * n as f64) as usize, (0.95 * n as f64) as usize);
    let train: Vec<LabeledBundle> = order[..a].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<LabeledBundle> = order[a..b].iter().map(|&i| rows[i].clone()).collect();
    let val: Vec<LabeledBundle> = order[b..].iter().map(|&i| rows[i].clone()).collect();

    let spec = RegressorSpec {
        stream_hidden: 48,
        stream_embed: 24,
        fusion_hidden: 48,
        body_source: StreamSource::Keypoints,
        face_source: StreamSource::FacePixels,
        seed: 3,
        ..Default::default()
    };
    let cfg = TrainConfig { lr: 0.004, lr_decay: 0.97, max_epochs: 60, patience: 10, seed: 3, ..Default::default() };
    let dims = DataDims::from_rows(&train)?;

    for (name, select) in [
        ("body stream only (keypoint MLP)", FeatureSelect::Body),
        ("face stream only (conv on crop) ", FeatureSelect::Face),
        ("both streams, fused            ", FeatureSelect::Both),
    ] {
        let model = build_deep_two_stream(&spec, &dims, select)?;
        let (trained, history) = train_regressor(model, &train, &val, &cfg)?;
        println!(
            "{name}: test MAE {:.3} cm ({} epochs, best {})",
            eval(&trained, &test)?,
            history.train_loss.len(),
            history.best_epoch
        );
    }
    println!("\nfusing both channels should clearly beat either alone");
    Ok(())
}
