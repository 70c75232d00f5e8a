//! The full mining path: a synthetic population flows through label
//! propagation and geometric preprocessing into filtered, whitened training
//! examples, exactly as web-mined data would.

use stature::assignment::{flatten_assignment, propagate_labels};
use stature::evaluation::{split_dataset, SplitMode, SplitSpec};
use stature::model::SubjectStore;
use stature::preprocess::{build_examples, lint_examples, PreprocessConfig};
use stature::synth::{generate_population, PopulationConfig};

fn main() -> stature::Result<()> {
    let config = PopulationConfig::nonlinear_split(3000, 11);
    let data = generate_population(&config)?;
    let store = SubjectStore::from_subjects(data.subjects.clone())?;

    let mut assigned = Vec::new();
    for set in &data.detection_sets {
        let assignment = propagate_labels(set, &store, 0.9)?;
        assigned.extend(flatten_assignment(&assignment, set));
    }
    println!("propagated {} labels", assigned.len());

    let preprocess = PreprocessConfig::default();
    let (examples, log) = build_examples(&assigned, &data.poses, &store, &preprocess)?;
    lint_examples(&examples, &preprocess)?;
    println!("kept {} examples after filtering", examples.len());
    for (reason, count) in log.iter() {
        println!("  rejected {count} for {reason}");
    }
    if log.total() == 0 {
        println!("  no rejections at default thresholds");
    }

    let spec = SplitSpec { fractions: (0.80, 0.15, 0.05), mode: SplitMode::BySubject, seed: 1 };
    let splits = split_dataset(&examples, &spec)?;
    println!(
        "split by subject: train {} / test {} / val {}",
        splits.train.len(),
        splits.test.len(),
        splits.val.len()
    );

    let sample = &examples[0];
    println!("\nfirst example: {}", sample.example_id());
    println!("  body crop {:>6.1} x {:>6.1} px", sample.body_crop.w, sample.body_crop.h);
    println!("  height label {:.1} cm, gender {}", sample.height_cm, sample.gender.as_str());
    let visible = sample.visibility.iter().filter(|v| **v).count();
    println!("  {visible} of {} joints visible, keypoints whitened to unit RMS", sample.visibility.len());
    Ok(())
}
