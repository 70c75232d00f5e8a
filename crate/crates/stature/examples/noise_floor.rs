//! On data whose height signal is linear in the observed features, ridge
//! regression should drive the test error down to the label-noise floor
//! sigma * sqrt(2/pi). The generator knows its own floor, so we can check.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::evaluation::{mae, nested_subsample_order};
use stature::model::SubjectStore;
use stature::preprocess::{build_examples, PreprocessConfig};
use stature::regressors::{rows_from_examples, FeatureSelect, LabeledBundle, LinearModel};
use stature::synth::{bayes_floor, bayes_floor_mc, generate_population, PopulationConfig};

fn main() -> stature::Result<()> {
    let config = PopulationConfig::linear_signal(6000, 21);
    let floor = bayes_floor(&config);
    let floor_mc = bayes_floor_mc(&config, 200_000, 3);
    println!("label noise sigma = {} cm", config.obs_noise_cm);
    println!("bayes floor: closed form {floor:.4} cm, monte carlo {floor_mc:.4} cm");

    let data = generate_population(&config)?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;
    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        assigned.extend(flatten_assignment(&propagate_labels(set, &store, 0.9)?, set));
    }
    let (examples, _) = build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default())?;
    let rows = rows_from_examples(&examples, None);

    let order = nested_subsample_order(rows.len(), 2);
    let n_train = (0.8 * rows.len() as f64) as usize;
    let train: Vec<LabeledBundle> = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<LabeledBundle> = order[n_train..].iter().map(|&i| rows[i].clone()).collect();

    let model = LinearModel::fit(&train, FeatureSelect::Both, 1e-6)?;
    let preds: Vec<f64> = test
        .iter()
        .map(|r| model.predict(&r.bundle))
        .collect::<stature::Result<_>>()?;
    let labels: Vec<f64> = test.iter().map(|r| r.height_cm).collect();
    let test_mae = mae(&preds, &labels)?;
    println!(
        "linear regression on {} train rows: test MAE {test_mae:.4} cm ({:.3} x floor)",
        train.len(),
        test_mae / floor
    );
    println!("the floor is an expectation: a finite test set fluctuates around it,");
    println!("but no predictor improves on it in the long run");
    Ok(())
}
