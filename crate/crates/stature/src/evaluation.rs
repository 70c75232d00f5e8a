//! Metrics and experiments: MAE, cumulative error histograms, deterministic
//! dataset splitting, per-gender evaluation reports, the feature-set by
//! architecture ablation grid, and accuracy as a function of training-set
//! size.

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gender_mean, GenderMean};
use crate::error::{Error, Result};
use crate::model::{AnnotatedExample, Gender};
use crate::regressors::{
    build_deep_two_stream, build_shallow, train_regressor, FeatureBundle, FeatureSelect,
    DataDims, LabeledBundle, LinearModel, RegressorSpec, TrainConfig,
};
use crate::rng::Rng;

/// Mean absolute error in centimeters.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if preds.len() != labels.len() {
        return Err(Error::SpecError(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / preds.len() as f64)
}

/// Fraction of examples with |error| <= t for each threshold t. Thresholds
/// must be sorted ascending and the last one must cover the largest error.
pub fn cumulative_error_histogram(
    preds: &[f64],
    labels: &[f64],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::EmptyInput("predictions"));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::SpecError("histogram thresholds must be sorted".into()));
    }
    let errors: Vec<f64> = preds.iter().zip(labels).map(|(p, l)| (p - l).abs()).collect();
    let max_err = errors.iter().cloned().fold(0.0, f64::max);
    match thresholds.last() {
        Some(&last) if last >= max_err => {}
        _ => {
            return Err(Error::SpecError(format!(
                "last threshold must cover the max error {max_err}"
            )))
        }
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, errors.iter().filter(|e| **e <= t).count() as f64 / n))
        .collect())
}

/// Default histogram grid: whole centimeters from 0, extended to cover the
/// largest observed error.
pub fn default_thresholds(max_cm: f64, errors_max: f64) -> Vec<f64> {
    let top = max_cm.max(errors_max.ceil());
    (0..=top as usize).map(|t| t as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub n: usize,
    pub mae: f64,
}

/// Per-gender MAE breakdown plus the cumulative error histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: GroupStat,
    pub female: GroupStat,
    pub male: GroupStat,
    pub unknown: GroupStat,
    pub histogram: Vec<(f64, f64)>,
}

pub fn build_report(
    preds: &[f64],
    labels: &[f64],
    genders: &[Gender],
    histogram_max_cm: f64,
) -> Result<EvalReport> {
    if preds.len() != labels.len() || preds.len() != genders.len() {
        return Err(Error::SpecError("report inputs must have equal length".into()));
    }
    let group = |want: Option<Gender>| -> Result<GroupStat> {
        let idx: Vec<usize> = (0..preds.len())
            .filter(|&i| want.map_or(true, |g| genders[i] == g))
            .collect();
        if idx.is_empty() {
            return Ok(GroupStat { n: 0, mae: f64::NAN });
        }
        let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        Ok(GroupStat { n: idx.len(), mae: mae(&p, &l)? })
    };
    let max_err = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .fold(0.0, f64::max);
    let thresholds = default_thresholds(histogram_max_cm, max_err);
    Ok(EvalReport {
        all: group(None)?,
        female: group(Some(Gender::Female))?,
        male: group(Some(Gender::Male))?,
        unknown: group(Some(Gender::Unknown))?,
        histogram: cumulative_error_histogram(preds, labels, &thresholds)?,
    })
}

// ---------------------------------------------------------------------------
// Dataset splitting.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    ByExample,
    /// All of a subject's examples land in one split, preventing identity
    /// leakage between train and test.
    BySubject,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "by-example" => Ok(SplitMode::ByExample),
            "by-subject" => Ok(SplitMode::BySubject),
            other => Err(Error::SpecError(format!("unknown split mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (train, test, val) fractions; must sum to 1.
    pub fractions: (f64, f64, f64),
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { fractions: (0.80, 0.15, 0.05), mode: SplitMode::BySubject, seed: 0 }
    }
}

/// Example-id lists per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub val: Vec<String>,
}

impl Splits {
    /// Partitions rows by membership; rows not named in any split are
    /// dropped.
    pub fn select<'a>(
        &self,
        rows: &'a [LabeledBundle],
    ) -> (Vec<&'a LabeledBundle>, Vec<&'a LabeledBundle>, Vec<&'a LabeledBundle>) {
        use std::collections::BTreeSet;
        let train: BTreeSet<&str> = self.train.iter().map(|s| s.as_str()).collect();
        let test: BTreeSet<&str> = self.test.iter().map(|s| s.as_str()).collect();
        let val: BTreeSet<&str> = self.val.iter().map(|s| s.as_str()).collect();
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for row in rows {
            let id = row.example_id.as_str();
            if train.contains(id) {
                out.0.push(row);
            } else if test.contains(id) {
                out.1.push(row);
            } else if val.contains(id) {
                out.2.push(row);
            }
        }
        out
    }
}

/// Seeded deterministic partition into train/test/val. ByExample hits the
/// rounded fractions exactly (within one example); BySubject keeps each
/// subject's examples together and fills splits greedily.
pub fn split_dataset(examples: &[AnnotatedExample], spec: &SplitSpec) -> Result<Splits> {
    let (ft, fe, fv) = spec.fractions;
    if (ft + fe + fv - 1.0).abs() > 1e-9 || ft < 0.0 || fe < 0.0 || fv < 0.0 {
        return Err(Error::SpecError(format!("fractions {:?} must sum to 1", spec.fractions)));
    }
    let n = examples.len();
    if n < 3 {
        return Err(Error::TooSmall { have: n, need: 3 });
    }
    let mut rng = Rng::new(spec.seed).derive("split");
    match spec.mode {
        SplitMode::ByExample => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            let c1 = (ft * n as f64).round() as usize;
            let c2 = ((ft + fe) * n as f64).round() as usize;
            let id = |i: &usize| examples[*i].example_id();
            Ok(Splits {
                train: idx[..c1].iter().map(id).collect(),
                test: idx[c1..c2].iter().map(id).collect(),
                val: idx[c2..].iter().map(id).collect(),
            })
        }
        SplitMode::BySubject => {
            use std::collections::BTreeMap;
            let mut by_subject: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            for e in examples {
                by_subject.entry(e.subject_id.as_str()).or_default().push(e.example_id());
            }
            let mut subjects: Vec<&str> = by_subject.keys().cloned().collect();
            rng.shuffle(&mut subjects);
            let targets = [ft * n as f64, fe * n as f64, fv * n as f64];
            let mut filled = [0usize; 3];
            let mut out = Splits { train: Vec::new(), test: Vec::new(), val: Vec::new() };
            for s in subjects {
                // Largest remaining relative deficit takes the subject.
                let deficit = |k: usize| {
                    if targets[k] <= 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        1.0 - filled[k] as f64 / targets[k]
                    }
                };
                let k = (0..3).max_by(|&a, &b| deficit(a).partial_cmp(&deficit(b)).unwrap()).unwrap();
                let ids = by_subject.get(s).unwrap();
                filled[k] += ids.len();
                match k {
                    0 => out.train.extend(ids.iter().cloned()),
                    1 => out.test.extend(ids.iter().cloned()),
                    _ => out.val.extend(ids.iter().cloned()),
                }
            }
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Ablation grid.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridArch {
    Linear,
    Shallow,
    Deep,
}

impl GridArch {
    pub fn as_str(self) -> &'static str {
        match self {
            GridArch::Linear => "linear",
            GridArch::Shallow => "shallow",
            GridArch::Deep => "deep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub features: FeatureSelect,
    pub arch: GridArch,
    pub mae: f64,
}

pub fn feature_name(select: FeatureSelect) -> &'static str {
    match select {
        FeatureSelect::Body => "body",
        FeatureSelect::Face => "face",
        FeatureSelect::Both => "both",
    }
}

/// Trains one grid cell and returns its test MAE.
pub fn train_cell(
    features: FeatureSelect,
    arch: GridArch,
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    test: &[LabeledBundle],
    spec: &RegressorSpec,
    cfg: &TrainConfig,
    ridge: f64,
) -> Result<f64> {
    let labels: Vec<f64> = test.iter().map(|r| r.height_cm).collect();
    let preds: Vec<f64> = match arch {
        GridArch::Linear => {
            let model = LinearModel::fit(train, features, ridge)?;
            test.iter().map(|r| model.predict(&r.bundle)).collect::<Result<_>>()?
        }
        GridArch::Shallow => {
            let dims = DataDims::from_rows(train)?;
            let model = build_shallow(spec, &dims, features)?;
            let (trained, _) = train_regressor(model, train, val, cfg)?;
            let bundles: Vec<&FeatureBundle> = test.iter().map(|r| &r.bundle).collect();
            trained.predict_batch(&bundles)?
        }
        GridArch::Deep => {
            let dims = DataDims::from_rows(train)?;
            let model = build_deep_two_stream(spec, &dims, features)?;
            let (trained, _) = train_regressor(model, train, val, cfg)?;
            let bundles: Vec<&FeatureBundle> = test.iter().map(|r| &r.bundle).collect();
            trained.predict_batch(&bundles)?
        }
    };
    mae(&preds, &labels)
}

/// Trains and evaluates all nine (feature set x regressor) combinations.
pub fn run_ablation_grid(
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    test: &[LabeledBundle],
    spec: &RegressorSpec,
    cfg: &TrainConfig,
    ridge: f64,
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(9);
    for features in [FeatureSelect::Body, FeatureSelect::Face, FeatureSelect::Both] {
        for arch in [GridArch::Linear, GridArch::Shallow, GridArch::Deep] {
            let mae = train_cell(features, arch, train, val, test, spec, cfg, ridge)
                .map_err(|e| Error::StageFailure {
                    stage: format!("grid cell {}/{}", feature_name(features), arch.as_str()),
                    cause: Box::new(e),
                })?;
            cells.push(GridCell { features, arch, mae });
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// Dataset-size curve.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub gender: Gender,
    pub mae: f64,
}

/// Shuffles once with the given seed; size-s subsamples are prefixes, so
/// smaller subsamples are nested inside larger ones.
pub fn nested_subsample_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed).derive("curve-subsample");
    rng.shuffle(&mut idx);
    idx
}

/// Test MAE of gender-specific regressors trained on nested subsamples of
/// the train split, one point per (size, gender), plus the GenderMean
/// reference fitted on the full train split.
pub fn dataset_size_curve(
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    test: &[LabeledBundle],
    sizes: &[usize],
    spec: &RegressorSpec,
    cfg: &TrainConfig,
) -> Result<(Vec<CurvePoint>, GenderMean)> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::SpecError("sizes must be strictly ascending".into()));
    }
    if sizes.last().map_or(true, |&s| s > train.len()) {
        return Err(Error::SpecError(format!(
            "largest size exceeds the train split ({} rows)",
            train.len()
        )));
    }
    let reference = fit_gender_mean(
        &train.iter().map(|r| (r.height_cm, r.gender)).collect::<Vec<_>>(),
    )?;
    let order = nested_subsample_order(train.len(), cfg.seed);
    let mut points = Vec::new();
    for &size in sizes {
        let subsample: Vec<&LabeledBundle> = order[..size].iter().map(|&i| &train[i]).collect();
        for gender in [Gender::Female, Gender::Male] {
            let sub_g: Vec<LabeledBundle> =
                subsample.iter().filter(|r| r.gender == gender).map(|r| (*r).clone()).collect();
            let val_g: Vec<LabeledBundle> =
                val.iter().filter(|r| r.gender == gender).cloned().collect();
            let test_g: Vec<LabeledBundle> =
                test.iter().filter(|r| r.gender == gender).cloned().collect();
            if sub_g.is_empty() || val_g.is_empty() || test_g.is_empty() {
                return Err(Error::EmptyInput("gender subset for curve point"));
            }
            let dims = DataDims::from_rows(&sub_g)?;
            let model = build_shallow(spec, &dims, FeatureSelect::Both)?;
            let (trained, _) = train_regressor(model, &sub_g, &val_g, cfg)?;
            let bundles: Vec<&FeatureBundle> = test_g.iter().map(|r| &r.bundle).collect();
            let preds = trained.predict_batch(&bundles)?;
            let labels: Vec<f64> = test_g.iter().map(|r| r.height_cm).collect();
            points.push(CurvePoint { size, gender, mae: mae(&preds, &labels)? });
        }
    }
    Ok((points, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, JOINT_COUNT};

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[170.0, 180.0], &[170.0, 180.0]).unwrap(), 0.0);
        assert_eq!(mae(&[170.0, 180.0], &[172.0, 176.0]).unwrap(), 3.0);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mae_permutation_invariant() {
        let p = [170.0, 180.0, 165.0];
        let l = [171.0, 178.0, 166.0];
        let a = mae(&p, &l).unwrap();
        let b = mae(&[p[2], p[0], p[1]], &[l[2], l[0], l[1]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_examples() {
        let preds = [1.0, 3.0, 5.0];
        let labels = [0.0, 0.0, 0.0];
        let h = cumulative_error_histogram(&preds, &labels, &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(h, vec![(2.0, 1.0 / 3.0), (4.0, 2.0 / 3.0), (6.0, 1.0)]);

        let flat = cumulative_error_histogram(&[0.0], &[0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(flat, vec![(0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn histogram_rejects_bad_thresholds() {
        assert!(matches!(
            cumulative_error_histogram(&[1.0], &[0.0], &[2.0, 1.0]),
            Err(Error::SpecError(_))
        ));
        assert!(matches!(
            cumulative_error_histogram(&[10.0], &[0.0], &[1.0, 2.0]),
            Err(Error::SpecError(_))
        ));
    }

    #[test]
    fn histogram_monotone_terminal_one() {
        let mut rng = Rng::new(40);
        for _ in 0..100 {
            let n = 1 + rng.below(50);
            let preds: Vec<f64> = (0..n).map(|_| rng.range(150.0, 190.0)).collect();
            let labels: Vec<f64> = (0..n).map(|_| rng.range(150.0, 190.0)).collect();
            let max_err = preds
                .iter()
                .zip(&labels)
                .map(|(p, l)| (p - l).abs())
                .fold(0.0, f64::max);
            let thresholds = default_thresholds(30.0, max_err);
            let h = cumulative_error_histogram(&preds, &labels, &thresholds).unwrap();
            assert!(h.windows(2).all(|w| w[0].1 <= w[1].1));
            assert_eq!(h.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn report_group_means_combine() {
        let preds = [170.0, 160.0, 180.0, 175.0];
        let labels = [172.0, 159.0, 184.0, 175.5];
        let genders = [Gender::Female, Gender::Female, Gender::Male, Gender::Unknown];
        let r = build_report(&preds, &labels, &genders, 30.0).unwrap();
        let combined = (r.female.n as f64 * r.female.mae
            + r.male.n as f64 * r.male.mae
            + r.unknown.n as f64 * r.unknown.mae)
            / r.all.n as f64;
        assert!((combined - r.all.mae).abs() < 1e-12);
        assert_eq!(r.female.n + r.male.n + r.unknown.n, r.all.n);
    }

    fn example(subject: &str, image: &str) -> AnnotatedExample {
        AnnotatedExample {
            subject_id: subject.into(),
            image_id: image.into(),
            body_crop: BBox::new(0.0, 0.0, 64.0, 128.0),
            face_crop: BBox::new(0.0, 0.0, 16.0, 16.0),
            keypoints_norm: vec![0.0; 2 * JOINT_COUNT],
            visibility: vec![true; JOINT_COUNT],
            face_features: vec![0.0; 4],
            height_cm: 170.0,
            gender: Gender::Unknown,
        }
    }

    #[test]
    fn split_by_example_sizes() {
        let examples: Vec<AnnotatedExample> =
            (0..100).map(|i| example(&format!("s{i}"), &format!("i{i}"))).collect();
        let spec = SplitSpec { mode: SplitMode::ByExample, seed: 1, ..Default::default() };
        let s = split_dataset(&examples, &spec).unwrap();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.test.len(), 15);
        assert_eq!(s.val.len(), 5);
    }

    #[test]
    fn split_disjoint_and_complete() {
        use std::collections::BTreeSet;
        let mut rng = Rng::new(50);
        for trial in 0..500 {
            let n = 3 + rng.below(60);
            let examples: Vec<AnnotatedExample> = (0..n)
                .map(|i| example(&format!("s{}", i % (1 + n / 3)), &format!("i{i}")))
                .collect();
            let mode = if rng.bernoulli(0.5) { SplitMode::ByExample } else { SplitMode::BySubject };
            let spec = SplitSpec { mode, seed: trial, ..Default::default() };
            let s = split_dataset(&examples, &spec).unwrap();
            let mut seen = BTreeSet::new();
            for id in s.train.iter().chain(&s.test).chain(&s.val) {
                assert!(seen.insert(id.clone()), "id {id} in two splits");
            }
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn split_by_subject_keeps_subjects_together() {
        use std::collections::BTreeMap;
        let examples: Vec<AnnotatedExample> = (0..90)
            .map(|i| example(&format!("s{}", i % 30), &format!("i{i}")))
            .collect();
        let spec = SplitSpec { mode: SplitMode::BySubject, seed: 3, ..Default::default() };
        let s = split_dataset(&examples, &spec).unwrap();
        let mut location: BTreeMap<String, &str> = BTreeMap::new();
        for (name, ids) in [("train", &s.train), ("test", &s.test), ("val", &s.val)] {
            for id in ids.iter() {
                let subject = id.split('/').nth(1).unwrap().to_string();
                if let Some(prev) = location.insert(subject.clone(), name) {
                    assert_eq!(prev, name, "subject {subject} straddles splits");
                }
            }
        }
    }

    #[test]
    fn split_deterministic() {
        let examples: Vec<AnnotatedExample> =
            (0..40).map(|i| example(&format!("s{i}"), &format!("i{i}"))).collect();
        let spec = SplitSpec { mode: SplitMode::ByExample, seed: 9, ..Default::default() };
        assert_eq!(split_dataset(&examples, &spec).unwrap(), split_dataset(&examples, &spec).unwrap());
    }

    #[test]
    fn split_too_small() {
        let examples = vec![example("a", "i1"), example("b", "i2")];
        assert!(matches!(
            split_dataset(&examples, &SplitSpec::default()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let examples: Vec<AnnotatedExample> =
            (0..10).map(|i| example(&format!("s{i}"), &format!("i{i}"))).collect();
        let spec = SplitSpec { fractions: (0.5, 0.4, 0.2), ..Default::default() };
        assert!(matches!(split_dataset(&examples, &spec), Err(Error::SpecError(_))));
    }

    #[test]
    fn nested_subsamples_are_prefixes() {
        let order = nested_subsample_order(50, 4);
        let small: Vec<usize> = order[..10].to_vec();
        let large: Vec<usize> = order[..30].to_vec();
        for s in &small {
            assert!(large.contains(s));
        }
        // Same seed, same order.
        assert_eq!(order, nested_subsample_order(50, 4));
    }
}
