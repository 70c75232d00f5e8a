//! Reference predictors versus a trained regressor: the overall mean, the
//! oracle gender mean, a gender classifier emitting gender means, offset-
//! calibrated external estimates, and the fused two-stream model.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::baselines::{
    calibrate_posenet_offset, fit_constant_mean, fit_gender_mean, OffsetFit,
};
use stature::evaluation::{mae, nested_subsample_order};
use stature::model::SubjectStore;
use stature::preprocess::{build_examples, PreprocessConfig};
use stature::regressors::*;
use stature::rng::Rng;
use stature::synth::{generate_population, PopulationConfig};

fn main() -> stature::Result<()> {
    let data = generate_population(&PopulationConfig::nonlinear_split(6000, 99))?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;
    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        assigned.extend(flatten_assignment(&propagate_labels(set, &store, 0.9)?, set));
    }
    let (examples, _) = build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default())?;
    let crops = index_crops(data.crops);
    let rows = rows_from_examples(&examples, Some(&crops));

    let order = nested_subsample_order(rows.len(), 12);
    let n = rows.len();
    let (a, b) = ((0.8 * n as f64) as usize, (0.95 * n as f64) as usize);
    let train: Vec<LabeledBundle> = order[..a].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<LabeledBundle> = order[a..b].iter().map(|&i| rows[i].clone()).collect();
    let val: Vec<LabeledBundle> = order[b..].iter().map(|&i| rows[i].clone()).collect();
    let labels: Vec<f64> = test.iter().map(|r| r.height_cm).collect();

    let heights: Vec<f64> = train.iter().map(|r| r.height_cm).collect();
    let constant = fit_constant_mean(&heights)?;
    let constant_mae = mae(&vec![constant.predict(); test.len()], &labels)?;
    println!("ConstantMean : {constant_mae:.3} cm  (predicts {:.1} for everyone)", constant.mean_cm);

    let gender_mean =
        fit_gender_mean(&train.iter().map(|r| (r.height_cm, r.gender)).collect::<Vec<_>>())?;
    let gm_preds: Vec<f64> = test.iter().map(|r| gender_mean.predict(r.gender)).collect();
    println!(
        "GenderMean   : {:.3} cm  (oracle gender; f {:.1}, m {:.1})",
        mae(&gm_preds, &labels)?,
        gender_mean.female_cm,
        gender_mean.male_cm
    );

    // A crude external 3D-pose height stand-in: right height up to a bias.
    let mut rng = Rng::new(4);
    let raw_train: Vec<f64> =
        train.iter().map(|r| r.height_cm - 11.0 + 6.0 * rng.normal()).collect();
    let offset = calibrate_posenet_offset(&raw_train, &heights, OffsetFit::Mean)?;
    let raw_test: Vec<f64> =
        test.iter().map(|r| r.height_cm - 11.0 + 6.0 * rng.normal()).collect();
    let cal_preds: Vec<f64> = raw_test.iter().map(|r| offset.predict(*r)).collect();
    println!(
        "PoseNet+c    : {:.3} cm  (constant offset {:+.2} absorbs the ankle-to-ground bias)",
        mae(&cal_preds, &labels)?,
        offset.offset_cm
    );

    let spec = RegressorSpec {
        stream_hidden: 48,
        stream_embed: 24,
        fusion_hidden: 48,
        body_source: StreamSource::Keypoints,
        face_source: StreamSource::FacePixels,
        seed: 1,
        ..Default::default()
    };
    let cfg = TrainConfig { lr: 0.004, lr_decay: 0.97, max_epochs: 60, patience: 10, seed: 1, ..Default::default() };
    let dims = DataDims::from_rows(&train)?;

    let classifier = build_deep_two_stream(&spec, &dims, FeatureSelect::Both)?;
    let (predictor, _, _) = train_gender_pred(classifier, &train, &val, &cfg)?;
    let gp_preds: Vec<f64> = test
        .iter()
        .map(|r| predictor.predict_height(&r.bundle))
        .collect::<stature::Result<_>>()?;
    println!("GenderPred   : {:.3} cm  (predicted gender's mean height)", mae(&gp_preds, &labels)?);

    let deep = build_deep_two_stream(&spec, &dims, FeatureSelect::Both)?;
    let (deep, _) = train_regressor(deep, &train, &val, &cfg)?;
    let bundles: Vec<&FeatureBundle> = test.iter().map(|r| &r.bundle).collect();
    let deep_preds = deep.predict_batch(&bundles)?;
    println!("DeepTwoStream: {:.3} cm  (trained end to end)", mae(&deep_preds, &labels)?);
    Ok(())
}
