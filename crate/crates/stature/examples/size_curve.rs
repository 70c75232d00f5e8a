//! Accuracy as a function of training-set size: gender-specific regressors
//! trained on nested subsamples, against the gender-mean reference line.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::evaluation::{dataset_size_curve, nested_subsample_order};
use stature::model::{Gender, SubjectStore};
use stature::preprocess::{build_examples, PreprocessConfig};
use stature::regressors::*;
use stature::synth::{generate_population, PopulationConfig};

fn main() -> stature::Result<()> {
    let data = generate_population(&PopulationConfig::nonlinear_split(8000, 23))?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;
    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        assigned.extend(flatten_assignment(&propagate_labels(set, &store, 0.9)?, set));
    }
    let (examples, _) = build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default())?;
    let crops = index_crops(data.crops);
    let rows = rows_from_examples(&examples, Some(&crops));

    let order = nested_subsample_order(rows.len(), 6);
    let n = rows.len();
    let (a, b) = ((0.8 * n as f64) as usize, (0.95 * n as f64) as usize);
    let train: Vec<LabeledBundle> = order[..a].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<LabeledBundle> = order[a..b].iter().map(|&i| rows[i].clone()).collect();
    let val: Vec<LabeledBundle> = order[b..].iter().map(|&i| rows[i].clone()).collect();

    let spec = RegressorSpec { shallow_hidden: vec![64, 64, 64], seed: 0, ..Default::default() };
    let cfg = TrainConfig { lr: 0.002, lr_decay: 0.97, max_epochs: 60, patience: 12, seed: 0, ..Default::default() };
    let sizes = [100, 400, 1600, 6400];
    let (points, reference) = dataset_size_curve(&train, &val, &test, &sizes, &spec, &cfg)?;

    for gender in [Gender::Female, Gender::Male] {
        let subset: Vec<&LabeledBundle> = test.iter().filter(|r| r.gender == gender).collect();
        let ref_mae = subset
            .iter()
            .map(|r| (r.height_cm - reference.predict(gender)).abs())
            .sum::<f64>()
            / subset.len() as f64;
        println!("{:<7} gender-mean reference: {ref_mae:.3} cm", gender.as_str());
        for p in points.iter().filter(|p| p.gender == gender) {
            let marker = if p.mae < ref_mae { "below reference" } else { "above reference" };
            println!("  {:>5} train rows -> {:.3} cm  ({marker})", p.size, p.mae);
        }
    }
    println!("\nmodels are subsample-nested: a larger size always contains the smaller one");
    Ok(())
}
