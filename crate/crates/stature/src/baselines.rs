//! Reference predictors: the overall train mean, gender-conditioned means
//! (oracle gender labels), and constant-offset calibration for externally
//! produced 3D-pose height estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Gender;

/// Predicts the arithmetic train mean for every input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantMean {
    pub mean_cm: f64,
}

pub fn fit_constant_mean(train_heights: &[f64]) -> Result<ConstantMean> {
    if train_heights.is_empty() {
        return Err(Error::EmptyInput("train heights"));
    }
    Ok(ConstantMean { mean_cm: train_heights.iter().sum::<f64>() / train_heights.len() as f64 })
}

impl ConstantMean {
    pub fn predict(&self) -> f64 {
        self.mean_cm
    }
}

/// Gender-specific train means, using the ground-truth gender as an oracle.
/// Unknown gender falls back to the overall mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderMean {
    pub female_cm: f64,
    pub male_cm: f64,
    pub overall_cm: f64,
    /// Set when a gender was absent from the train split and its mean fell
    /// back to the overall mean.
    pub fallback: bool,
}

pub fn fit_gender_mean(train: &[(f64, Gender)]) -> Result<GenderMean> {
    if train.is_empty() {
        return Err(Error::EmptyInput("train heights"));
    }
    let overall = train.iter().map(|(h, _)| h).sum::<f64>() / train.len() as f64;
    let mean_of = |gender: Gender| -> Option<f64> {
        let rows: Vec<f64> =
            train.iter().filter(|(_, g)| *g == gender).map(|(h, _)| *h).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    };
    let female = mean_of(Gender::Female);
    let male = mean_of(Gender::Male);
    let fallback = female.is_none() || male.is_none();
    Ok(GenderMean {
        female_cm: female.unwrap_or(overall),
        male_cm: male.unwrap_or(overall),
        overall_cm: overall,
        fallback,
    })
}

impl GenderMean {
    pub fn predict(&self, gender: Gender) -> f64 {
        match gender {
            Gender::Female => self.female_cm,
            Gender::Male => self.male_cm,
            Gender::Unknown => self.overall_cm,
        }
    }
}

/// How the constant offset between raw 3D-pose heights and ground truth is
/// fitted: the mean minimizes squared error, the median absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetFit {
    Mean,
    Median,
}

/// Calibrated external height predictor: raw prediction plus a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosenetOffset {
    pub offset_cm: f64,
}

/// Finds the constant c minimizing the chosen criterion over
/// (true - raw) residuals; the calibrated predictor is raw + c.
pub fn calibrate_posenet_offset(
    raw: &[f64],
    truth: &[f64],
    fit: OffsetFit,
) -> Result<PosenetOffset> {
    if raw.is_empty() || raw.len() != truth.len() {
        return Err(Error::EmptyInput("paired raw/true heights"));
    }
    let mut residuals: Vec<f64> = truth.iter().zip(raw).map(|(t, p)| t - p).collect();
    let offset = match fit {
        OffsetFit::Mean => residuals.iter().sum::<f64>() / residuals.len() as f64,
        OffsetFit::Median => {
            residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = residuals.len();
            if n % 2 == 1 {
                residuals[n / 2]
            } else {
                (residuals[n / 2 - 1] + residuals[n / 2]) / 2.0
            }
        }
    };
    Ok(PosenetOffset { offset_cm: offset })
}

impl PosenetOffset {
    pub fn predict(&self, raw_cm: f64) -> f64 {
        raw_cm + self.offset_cm
    }
}
