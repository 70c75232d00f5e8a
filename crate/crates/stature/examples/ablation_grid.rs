//! The 3x3 ablation: body / face / fused features against linear, shallow
//! and deep regressors, each cell trained and scored on the test split.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::evaluation::{feature_name, nested_subsample_order, run_ablation_grid, GridArch};
use stature::model::SubjectStore;
use stature::preprocess::{build_examples, PreprocessConfig};
use stature::regressors::*;
use stature::synth::{generate_population, PopulationConfig};

fn main() -> stature::Result<()> {
    let data = generate_population(&PopulationConfig::nonlinear_split(5000, 17))?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;
    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        assigned.extend(flatten_assignment(&propagate_labels(set, &store, 0.9)?, set));
    }
    let (examples, _) = build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default())?;
    let crops = index_crops(data.crops);
    let rows = rows_from_examples(&examples, Some(&crops));

    let order = nested_subsample_order(rows.len(), 2);
    let n = rows.len();
    let (a, b) = ((0.8 * n as f64) as usize, (0.95 * n as f64) as usize);
    let train: Vec<LabeledBundle> = order[..a].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<LabeledBundle> = order[a..b].iter().map(|&i| rows[i].clone()).collect();
    let val: Vec<LabeledBundle> = order[b..].iter().map(|&i| rows[i].clone()).collect();

    let spec = RegressorSpec {
        shallow_hidden: vec![64, 64, 64],
        stream_hidden: 48,
        stream_embed: 24,
        fusion_hidden: 48,
        body_source: StreamSource::Keypoints,
        face_source: StreamSource::FacePixels,
        seed: 0,
        ..Default::default()
    };
    let cfg = TrainConfig { lr: 0.003, lr_decay: 0.97, max_epochs: 50, patience: 10, seed: 0, ..Default::default() };
    let cells = run_ablation_grid(&train, &val, &test, &spec, &cfg, 1e-6)?;

    println!("test MAE (cm) per feature set and regressor:\n");
    println!("{:>12} {:>8} {:>8} {:>8}", "", "linear", "shallow", "deep");
    for features in ["body", "face", "both"] {
        let cell = |arch: GridArch| {
            cells
                .iter()
                .find(|c| feature_name(c.features) == features && c.arch == arch)
                .map(|c| c.mae)
                .unwrap_or(f64::NAN)
        };
        println!(
            "{features:>12} {:>8.3} {:>8.3} {:>8.3}",
            cell(GridArch::Linear),
            cell(GridArch::Shallow),
            cell(GridArch::Deep)
        );
    }
    println!("\nthe fused deep cell should be the best of the nine");
    Ok(())
}
