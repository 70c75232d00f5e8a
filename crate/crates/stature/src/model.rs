//! Domain types shared by every module: subjects with height labels, face
//! detections, 2D pose records, mined training examples and flat parameter
//! stores. All types are immutable after construction and safe to share
//! across threads.
//!
//! Record files are line-delimited JSON (`subjects.jsonl`, `detections.jsonl`,
//! `poses.jsonl`, `examples.jsonl`) with field names matching the struct
//! definitions here.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joints in the COCO 18-joint layout emitted by multi-person 2D
/// pose extractors. A different layout is a configuration change: everything
/// downstream reads these constants.
pub const JOINT_COUNT: usize = 18;

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const R_ELBOW: usize = 3;
pub const R_WRIST: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const L_ELBOW: usize = 6;
pub const L_WRIST: usize = 7;
pub const R_HIP: usize = 8;
pub const R_KNEE: usize = 9;
pub const R_ANKLE: usize = 10;
pub const L_HIP: usize = 11;
pub const L_KNEE: usize = 12;
pub const L_ANKLE: usize = 13;
pub const R_EYE: usize = 14;
pub const L_EYE: usize = 15;
pub const R_EAR: usize = 16;
pub const L_EAR: usize = 17;

/// Joints that must be visible for a crop to be kept: neck, both shoulders,
/// both hips. The torso must be present for a stable body crop.
pub const REQUIRED_UPPER_BODY: [usize; 5] = [NECK, R_SHOULDER, L_SHOULDER, R_HIP, L_HIP];

/// Head-evidence joints used to associate a face detection with a skeleton.
pub const HEAD_JOINTS: [usize; 5] = [NOSE, R_EYE, L_EYE, R_EAR, L_EAR];

/// Accepted range for height labels in centimeters.
pub const HEIGHT_MIN_CM: f64 = 100.0;
pub const HEIGHT_MAX_CM: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

/// Axis-aligned pixel rectangle (x, y, w, h), stored as a 4-array on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox { x: a[0], y: a[1], w: a[2], h: a[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        (self.w * self.w + self.h * self.h).sqrt()
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Grow by `pad` pixels on every side.
    pub fn expand(&self, pad: f64) -> BBox {
        BBox::new(self.x - pad, self.y - pad, self.w + 2.0 * pad, self.h + 2.0 * pad)
    }

    /// Intersect with the image rectangle (0, 0, width, height).
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width).max(x0);
        let y1 = (self.y + self.h).min(height).max(y0);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// A labeled identity: height in centimeters, optional gender and the
/// profile facial descriptor used for matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub height_cm: f64,
    pub gender: Gender,
    pub descriptor: Vec<f64>,
}

/// Checks subject invariants: non-empty id, height in [100, 250] cm,
/// descriptor of the dataset-wide dimension.
pub fn validate_subject(subject: Subject, d_face: usize) -> Result<Subject> {
    if subject.id.is_empty() {
        return Err(Error::SpecError("subject id must be non-empty".into()));
    }
    if !subject.height_cm.is_finite()
        || subject.height_cm < HEIGHT_MIN_CM
        || subject.height_cm > HEIGHT_MAX_CM
    {
        return Err(Error::HeightOutOfRange { id: subject.id, height_cm: subject.height_cm });
    }
    if subject.descriptor.len() != d_face {
        return Err(Error::DescriptorDimMismatch {
            context: format!("subject '{}'", subject.id),
            expected: d_face,
            got: subject.descriptor.len(),
        });
    }
    Ok(subject)
}

/// Canonicalizes height text to centimeters.
///
/// Accepts explicit units ("1.78m", "178cm") and bare numbers, where values
/// below 3 are read as meters and values of 100 or more as centimeters.
/// Bare values in [3, 100) cannot be resolved and are rejected.
pub fn unit_parse_height(text: &str) -> Result<f64> {
    let t = text.trim().to_ascii_lowercase();
    let ambiguous = || Error::AmbiguousUnit(text.to_string());
    let (number, unit) = if let Some(stripped) = t.strip_suffix("cm") {
        (stripped.trim(), Some("cm"))
    } else if let Some(stripped) = t.strip_suffix('m') {
        (stripped.trim(), Some("m"))
    } else {
        (t.as_str(), None)
    };
    let value: f64 = number.parse().map_err(|_| ambiguous())?;
    if !value.is_finite() || value <= 0.0 {
        return Err(ambiguous());
    }
    match unit {
        Some("cm") => Ok(value),
        Some(_) => Ok(value * 100.0),
        None if value < 3.0 => Ok(value * 100.0),
        None if value >= 100.0 => Ok(value),
        None => Err(ambiguous()),
    }
}

/// One detected face: bounding box plus appearance descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub descriptor: Vec<f64>,
}

/// All face detections of one image together with the image's candidate
/// subject labels. Labels say who is in the image, not where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub candidate_subjects: Vec<String>,
    pub image_size: (u32, u32),
}

/// One 2D joint: pixel location plus confidence in [0, 1]. Confidence 0
/// means the joint was not found; its coordinates are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl From<[f64; 3]> for Joint {
    fn from(a: [f64; 3]) -> Self {
        Joint { x: a[0], y: a[1], confidence: a[2] }
    }
}

impl From<Joint> for [f64; 3] {
    fn from(j: Joint) -> Self {
        [j.x, j.y, j.confidence]
    }
}

impl Joint {
    pub fn visible(&self) -> bool {
        self.confidence > 0.0
    }
}

/// Per-image 2D pose estimates: one joint array per detected person,
/// in the 18-joint COCO ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub image_id: String,
    pub persons: Vec<Vec<Joint>>,
}

impl PoseRecord {
    pub fn validate(&self) -> Result<()> {
        for person in &self.persons {
            if person.len() != JOINT_COUNT {
                return Err(Error::SpecError(format!(
                    "pose in '{}' has {} joints, layout expects {}",
                    self.image_id,
                    person.len(),
                    JOINT_COUNT
                )));
            }
            for j in person {
                if !(0.0..=1.0).contains(&j.confidence) {
                    return Err(Error::SpecError(format!(
                        "pose in '{}' has confidence {} outside [0, 1]",
                        self.image_id, j.confidence
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The mined training unit: crop geometry, normalized keypoints, facial
/// feature vector, height label and gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub subject_id: String,
    pub image_id: String,
    pub body_crop: BBox,
    pub face_crop: BBox,
    /// 2J values: centered and whitened (x, y) per joint, (0, 0) when missing.
    pub keypoints_norm: Vec<f64>,
    /// Per-joint visibility mask parallel to `keypoints_norm`.
    pub visibility: Vec<bool>,
    pub face_features: Vec<f64>,
    pub height_cm: f64,
    pub gender: Gender,
}

impl AnnotatedExample {
    /// Stable key for prediction and audit CSVs.
    pub fn example_id(&self) -> String {
        format!("{}/{}", self.image_id, self.subject_id)
    }
}

/// Named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter store for any regressor: values plus the named layout
/// that maps layer names to slices, and the seed they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layout: Vec<ParamSlice>,
    pub seed: u64,
}

impl ModelParams {
    /// Layout slices must be disjoint, in order, and cover `values` exactly;
    /// all values must be finite.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0usize;
        for slice in &self.layout {
            if slice.offset != cursor {
                return Err(Error::SpecError(format!(
                    "layout slice '{}' at offset {}, expected {}",
                    slice.name, slice.offset, cursor
                )));
            }
            cursor += slice.len();
        }
        if cursor != self.values.len() {
            return Err(Error::SpecError(format!(
                "layout covers {cursor} values, buffer holds {}",
                self.values.len()
            )));
        }
        if let Some(bad) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DivergenceFault {
                step: 0,
                context: format!("parameter buffer index {bad}"),
            });
        }
        Ok(())
    }

    pub fn slice(&self, name: &str) -> Option<(&ParamSlice, &[f64])> {
        let s = self.layout.iter().find(|s| s.name == name)?;
        Some((s, &self.values[s.offset..s.offset + s.len()]))
    }
}

/// Read-only collection of validated subjects with unique ids and a single
/// descriptor dimension.
#[derive(Debug, Clone)]
pub struct SubjectStore {
    subjects: BTreeMap<String, Subject>,
    d_face: usize,
}

impl SubjectStore {
    pub fn from_subjects(subjects: Vec<Subject>) -> Result<Self> {
        let d_face = match subjects.first() {
            Some(s) => s.descriptor.len(),
            None => return Err(Error::EmptyInput("subject store")),
        };
        let mut map = BTreeMap::new();
        for s in subjects {
            let s = validate_subject(s, d_face)?;
            if map.insert(s.id.clone(), s.clone()).is_some() {
                return Err(Error::SpecError(format!("duplicate subject id '{}'", s.id)));
            }
        }
        Ok(SubjectStore { subjects: map, d_face })
    }

    pub fn get(&self, id: &str) -> Option<&Subject> {
        self.subjects.get(id)
    }

    pub fn d_face(&self) -> usize {
        self.d_face
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Subject> {
        self.subjects.values()
    }
}
