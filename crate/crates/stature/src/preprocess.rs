//! Turns assigned detections plus 2D pose records into filtered, normalized
//! training examples: head-based person association, body crop geometry,
//! upper-body/size filtering and keypoint whitening.
//!
//! Keypoint normalization deliberately destroys absolute image scale: only
//! pose shape and body proportions survive, which is exactly the signal a
//! single uncalibrated image can carry.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assignment::AssignedDetection;
use crate::error::{Error, Result};
use crate::io::CsvWriter;
use crate::model::{
    AnnotatedExample, BBox, Joint, PoseRecord, SubjectStore, HEAD_JOINTS, JOINT_COUNT, NECK,
    REQUIRED_UPPER_BODY,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Crop margin as a fraction of the longer crop side.
    pub margin: f64,
    /// Minimum body-crop height in pixels; shorter crops are rejected.
    pub min_crop_px: f64,
    /// Joints that must be visible for an example to survive.
    pub required_joints: Vec<usize>,
    /// Head-association gate in face-bbox diagonals.
    pub head_gate_diagonals: f64,
    /// Square side the crop geometry maps onto.
    pub pad_target: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            margin: 0.10,
            min_crop_px: 32.0,
            required_joints: REQUIRED_UPPER_BODY.to_vec(),
            head_gate_diagonals: 2.0,
            pad_target: 256,
        }
    }
}

/// Why a candidate example was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    MissingUpperBody,
    CropTooSmall,
    MissingPose,
    NoHeadMatch,
    DegenerateCrop,
    DegenerateKeypoints,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingUpperBody => "missing_upper_body",
            RejectReason::CropTooSmall => "crop_too_small",
            RejectReason::MissingPose => "missing_pose",
            RejectReason::NoHeadMatch => "no_head_match",
            RejectReason::DegenerateCrop => "degenerate_crop",
            RejectReason::DegenerateKeypoints => "degenerate_keypoints",
        }
    }
}

/// Per-reason rejection counts. Logs from parallel workers merge by
/// summation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RejectionLog {
    counts: BTreeMap<&'static str, usize>,
}

impl RejectionLog {
    pub fn add(&mut self, reason: RejectReason) {
        *self.counts.entry(reason.as_str()).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &RejectionLog) {
        for (reason, n) in &other.counts {
            *self.counts.entry(reason).or_insert(0) += n;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.counts.get(reason.as_str()).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, usize)> + '_ {
        self.counts.iter().map(|(r, n)| (*r, *n))
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = CsvWriter::create(path, &["reason", "count"])?;
        for (reason, n) in self.iter() {
            w.row(&[reason.to_string(), n.to_string()])?;
        }
        w.finish()
    }
}

fn head_proxy(person: &[Joint]) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for &idx in &HEAD_JOINTS {
        let j = person[idx];
        if j.visible() {
            sx += j.x;
            sy += j.y;
            n += 1;
        }
    }
    if n > 0 {
        return Some((sx / n as f64, sy / n as f64));
    }
    let neck = person[NECK];
    neck.visible().then_some((neck.x, neck.y))
}

/// Picks the skeleton whose head evidence (mean of visible nose/eye/ear
/// joints, falling back to the neck) lies closest to the face center.
/// Returns nothing when no skeleton has head evidence or the nearest one is
/// farther than `gate_diagonals` face diagonals away.
pub fn associate_pose(face_bbox: &BBox, pose: &PoseRecord, gate_diagonals: f64) -> Option<usize> {
    let (cx, cy) = face_bbox.center();
    let mut best: Option<(usize, f64)> = None;
    for (idx, person) in pose.persons.iter().enumerate() {
        if let Some((hx, hy)) = head_proxy(person) {
            let dist = ((hx - cx).powi(2) + (hy - cy).powi(2)).sqrt();
            if best.map_or(true, |(_, d)| dist < d) {
                best = Some((idx, dist));
            }
        }
    }
    let (idx, dist) = best?;
    (dist <= gate_diagonals * face_bbox.diagonal()).then_some(idx)
}

/// Axis-aligned box of the visible joints, unioned with the face box and
/// expanded by `margin` of the longer side on every side. Not clamped;
/// callers clamp against their image bounds.
pub fn body_crop_from_keypoints(joints: &[Joint], face_bbox: &BBox, margin: f64) -> Result<BBox> {
    let visible: Vec<&Joint> = joints.iter().filter(|j| j.visible()).collect();
    if visible.len() < 2 {
        return Err(Error::DegenerateCrop(format!("{} visible joints", visible.len())));
    }
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for j in visible {
        x0 = x0.min(j.x);
        y0 = y0.min(j.y);
        x1 = x1.max(j.x);
        y1 = y1.max(j.y);
    }
    let tight = BBox::new(x0, y0, x1 - x0, y1 - y0).union(face_bbox);
    let pad = margin * tight.w.max(tight.h);
    Ok(tight.expand(pad))
}

/// Keep/reject decision for one candidate: requires all configured
/// upper-body joints visible and a crop at least `min_crop_px` tall.
pub fn filter_example(
    joints: &[Joint],
    crop: &BBox,
    config: &PreprocessConfig,
) -> Option<RejectReason> {
    for &idx in &config.required_joints {
        if !joints[idx].visible() {
            return Some(RejectReason::MissingUpperBody);
        }
    }
    if crop.h < config.min_crop_px {
        return Some(RejectReason::CropTooSmall);
    }
    None
}

/// Centers visible joints on their mean and divides by their RMS radius
/// (isotropic whitening, preserving aspect ratio). Missing joints come out
/// as (0, 0); the returned mask marks which joints were visible.
pub fn normalize_keypoints(joints: &[Joint]) -> Result<(Vec<f64>, Vec<bool>)> {
    let visible: Vec<usize> = (0..joints.len()).filter(|&i| joints[i].visible()).collect();
    if visible.len() < 2 {
        return Err(Error::DegenerateCrop(format!(
            "{} visible joints, need at least 2",
            visible.len()
        )));
    }
    let n = visible.len() as f64;
    let mx = visible.iter().map(|&i| joints[i].x).sum::<f64>() / n;
    let my = visible.iter().map(|&i| joints[i].y).sum::<f64>() / n;
    let rms = (visible
        .iter()
        .map(|&i| (joints[i].x - mx).powi(2) + (joints[i].y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if rms == 0.0 {
        return Err(Error::ZeroScale);
    }
    let mut out = vec![0.0; 2 * joints.len()];
    let mut mask = vec![false; joints.len()];
    for &i in &visible {
        out[2 * i] = (joints[i].x - mx) / rms;
        out[2 * i + 1] = (joints[i].y - my) / rms;
        mask[i] = true;
    }
    Ok((out, mask))
}

/// Deterministic geometry mapping a crop onto a `target` x `target` square:
/// isotropic scale on the longer side, symmetric padding (in source pixels)
/// on the shorter one. Usable for any pixel source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub scale: f64,
    /// Source-pixel padding (before, after) along x.
    pub pad_x: (f64, f64),
    /// Source-pixel padding (before, after) along y.
    pub pad_y: (f64, f64),
}

pub fn pad_crop_geometry(bbox: &BBox, target: u32) -> Result<CropGeometry> {
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::DegenerateCrop(format!("{}x{} crop", bbox.w, bbox.h)));
    }
    let long = bbox.w.max(bbox.h);
    let scale = target as f64 / long;
    let pad_w = (long - bbox.w) / 2.0;
    let pad_h = (long - bbox.h) / 2.0;
    Ok(CropGeometry { scale, pad_x: (pad_w, pad_w), pad_y: (pad_h, pad_h) })
}

/// Builds one annotated example per surviving assignment and counts every
/// rejection by reason. Missing pose records are logged, not fatal;
/// duplicate (image, subject) pairs are.
pub fn build_examples(
    assignments: &[AssignedDetection],
    poses: &[PoseRecord],
    store: &SubjectStore,
    config: &PreprocessConfig,
) -> Result<(Vec<AnnotatedExample>, RejectionLog)> {
    let mut by_image: BTreeMap<&str, &PoseRecord> = BTreeMap::new();
    for p in poses {
        p.validate()?;
        by_image.entry(p.image_id.as_str()).or_insert(p);
    }

    let mut examples = Vec::new();
    let mut log = RejectionLog::default();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();

    for a in assignments {
        let subject = store.get(&a.subject).ok_or_else(|| Error::UnknownSubject {
            image_id: a.image_id.clone(),
            subject_id: a.subject.clone(),
        })?;
        let key = (a.image_id.clone(), a.subject.clone());
        if !seen.insert(key) {
            return Err(Error::DuplicateExample {
                image_id: a.image_id.clone(),
                subject_id: a.subject.clone(),
            });
        }

        let Some(pose) = by_image.get(a.image_id.as_str()) else {
            log.add(RejectReason::MissingPose);
            continue;
        };
        let Some(person_idx) = associate_pose(&a.bbox, pose, config.head_gate_diagonals) else {
            log.add(RejectReason::NoHeadMatch);
            continue;
        };
        let joints = &pose.persons[person_idx];

        let crop = match body_crop_from_keypoints(joints, &a.bbox, config.margin) {
            Ok(c) => c.clamp_to(a.image_size.0 as f64, a.image_size.1 as f64),
            Err(_) => {
                log.add(RejectReason::DegenerateCrop);
                continue;
            }
        };
        if let Some(reason) = filter_example(joints, &crop, config) {
            log.add(reason);
            continue;
        }
        let (keypoints_norm, visibility) = match normalize_keypoints(joints) {
            Ok(kv) => kv,
            Err(_) => {
                log.add(RejectReason::DegenerateKeypoints);
                continue;
            }
        };

        examples.push(AnnotatedExample {
            subject_id: subject.id.clone(),
            image_id: a.image_id.clone(),
            body_crop: crop,
            face_crop: a.bbox,
            keypoints_norm,
            visibility,
            face_features: a.descriptor.clone(),
            height_cm: subject.height_cm,
            gender: subject.gender,
        });
    }
    Ok((examples, log))
}

/// Checks the post-filter invariants of a finalized dataset: crop height,
/// centered unit-RMS keypoints, consistent feature dimension, finite label.
pub fn lint_examples(examples: &[AnnotatedExample], config: &PreprocessConfig) -> Result<()> {
    let d_feat = match examples.first() {
        Some(e) => e.face_features.len(),
        None => return Ok(()),
    };
    for e in examples {
        let id = e.example_id();
        if e.body_crop.h < config.min_crop_px {
            return Err(Error::SpecError(format!(
                "{id}: crop height {} below {}",
                e.body_crop.h, config.min_crop_px
            )));
        }
        if e.keypoints_norm.len() != 2 * JOINT_COUNT || e.visibility.len() != JOINT_COUNT {
            return Err(Error::SpecError(format!("{id}: keypoint vector has wrong length")));
        }
        if e.face_features.len() != d_feat {
            return Err(Error::DescriptorDimMismatch {
                context: id,
                expected: d_feat,
                got: e.face_features.len(),
            });
        }
        let visible: Vec<usize> = (0..JOINT_COUNT).filter(|&i| e.visibility[i]).collect();
        let n = visible.len() as f64;
        let mx = visible.iter().map(|&i| e.keypoints_norm[2 * i]).sum::<f64>() / n;
        let my = visible.iter().map(|&i| e.keypoints_norm[2 * i + 1]).sum::<f64>() / n;
        if mx.abs() >= 1e-9 || my.abs() >= 1e-9 {
            return Err(Error::SpecError(format!("{id}: keypoints not centered ({mx}, {my})")));
        }
        let rms = (visible
            .iter()
            .map(|&i| e.keypoints_norm[2 * i].powi(2) + e.keypoints_norm[2 * i + 1].powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        if (rms - 1.0).abs() >= 1e-9 {
            return Err(Error::SpecError(format!("{id}: keypoint scale {rms} is not 1")));
        }
        if !e.height_cm.is_finite() {
            return Err(Error::SpecError(format!("{id}: non-finite height")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gender, Subject, L_SHOULDER};
    use crate::rng::Rng;

    fn joint(x: f64, y: f64) -> Joint {
        Joint { x, y, confidence: 0.9 }
    }

    fn missing() -> Joint {
        Joint { x: 0.0, y: 0.0, confidence: 0.0 }
    }

    /// Upright skeleton roughly `height` px tall with its head near `(x, y)`.
    fn skeleton(x: f64, y: f64, height: f64) -> Vec<Joint> {
        let h = height;
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[crate::model::NOSE] = joint(x, y);
        joints[crate::model::NECK] = joint(x, y + 0.10 * h);
        joints[crate::model::R_SHOULDER] = joint(x - 0.12 * h, y + 0.12 * h);
        joints[crate::model::L_SHOULDER] = joint(x + 0.12 * h, y + 0.12 * h);
        joints[crate::model::R_ELBOW] = joint(x - 0.14 * h, y + 0.30 * h);
        joints[crate::model::L_ELBOW] = joint(x + 0.14 * h, y + 0.30 * h);
        joints[crate::model::R_WRIST] = joint(x - 0.15 * h, y + 0.45 * h);
        joints[crate::model::L_WRIST] = joint(x + 0.15 * h, y + 0.45 * h);
        joints[crate::model::R_HIP] = joint(x - 0.08 * h, y + 0.50 * h);
        joints[crate::model::L_HIP] = joint(x + 0.08 * h, y + 0.50 * h);
        joints[crate::model::R_KNEE] = joint(x - 0.09 * h, y + 0.72 * h);
        joints[crate::model::L_KNEE] = joint(x + 0.09 * h, y + 0.72 * h);
        joints[crate::model::R_ANKLE] = joint(x - 0.09 * h, y + 0.95 * h);
        joints[crate::model::L_ANKLE] = joint(x + 0.09 * h, y + 0.95 * h);
        joints[crate::model::R_EYE] = joint(x - 0.02 * h, y - 0.01 * h);
        joints[crate::model::L_EYE] = joint(x + 0.02 * h, y - 0.01 * h);
        joints
    }

    #[test]
    fn associate_picks_person_at_center() {
        let face = BBox::new(90.0, 90.0, 20.0, 20.0);
        let pose =
            PoseRecord { image_id: "i".into(), persons: vec![skeleton(100.0, 100.0, 200.0)] };
        assert_eq!(associate_pose(&face, &pose, 2.0), Some(0));
    }

    #[test]
    fn associate_picks_nearer_of_two() {
        // Heads at ~5 px and ~300 px from a 40 px box's center.
        let face = BBox::new(80.0, 80.0, 40.0, 40.0);
        let near = skeleton(105.0, 100.0, 150.0);
        let far = skeleton(400.0, 100.0, 150.0);
        let pose = PoseRecord { image_id: "i".into(), persons: vec![far, near] };
        assert_eq!(associate_pose(&face, &pose, 2.0), Some(1));
    }

    #[test]
    fn associate_rejects_all_heads_missing() {
        let mut person = skeleton(100.0, 100.0, 150.0);
        for &i in &HEAD_JOINTS {
            person[i] = missing();
        }
        person[NECK] = missing();
        let face = BBox::new(90.0, 90.0, 20.0, 20.0);
        let pose = PoseRecord { image_id: "i".into(), persons: vec![person] };
        assert_eq!(associate_pose(&face, &pose, 2.0), None);
    }

    #[test]
    fn associate_falls_back_to_neck() {
        let mut person = skeleton(100.0, 100.0, 150.0);
        for &i in &HEAD_JOINTS {
            person[i] = missing();
        }
        let face = BBox::new(90.0, 100.0, 20.0, 20.0);
        let pose = PoseRecord { image_id: "i".into(), persons: vec![person] };
        assert_eq!(associate_pose(&face, &pose, 2.0), Some(0));
    }

    #[test]
    fn associate_respects_distance_gate() {
        let face = BBox::new(0.0, 0.0, 10.0, 10.0);
        // Head ~200 px away, gate is 2 diagonals (~28 px).
        let pose =
            PoseRecord { image_id: "i".into(), persons: vec![skeleton(200.0, 100.0, 150.0)] };
        assert_eq!(associate_pose(&face, &pose, 2.0), None);
    }

    #[test]
    fn body_crop_margin_arithmetic() {
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[0] = joint(0.0, 0.0);
        joints[1] = joint(100.0, 200.0);
        let face = BBox::new(40.0, 10.0, 20.0, 20.0);
        let crop = body_crop_from_keypoints(&joints, &face, 0.10).unwrap();
        assert!((crop.x - -20.0).abs() < 1e-9);
        assert!((crop.y - -20.0).abs() < 1e-9);
        assert!((crop.x + crop.w - 120.0).abs() < 1e-9);
        assert!((crop.y + crop.h - 220.0).abs() < 1e-9);
    }

    #[test]
    fn body_crop_single_joint_degenerate() {
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[0] = joint(5.0, 5.0);
        let face = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert!(matches!(
            body_crop_from_keypoints(&joints, &face, 0.10),
            Err(Error::DegenerateCrop(_))
        ));
    }

    #[test]
    fn body_crop_unions_protruding_face() {
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[0] = joint(0.0, 50.0);
        joints[1] = joint(100.0, 150.0);
        let face = BBox::new(40.0, 0.0, 20.0, 20.0);
        let crop = body_crop_from_keypoints(&joints, &face, 0.0).unwrap();
        assert_eq!(crop.y, 0.0);
        assert_eq!(crop.h, 150.0);
    }

    #[test]
    fn filter_boundary_at_32px() {
        let cfg = PreprocessConfig::default();
        let joints = skeleton(100.0, 100.0, 100.0);
        let short = BBox::new(0.0, 0.0, 30.0, 31.5);
        assert_eq!(filter_example(&joints, &short, &cfg), Some(RejectReason::CropTooSmall));
        let exact = BBox::new(0.0, 0.0, 30.0, 32.0);
        assert_eq!(filter_example(&joints, &exact, &cfg), None);
    }

    #[test]
    fn filter_missing_shoulder() {
        let cfg = PreprocessConfig::default();
        let mut joints = skeleton(100.0, 100.0, 100.0);
        joints[L_SHOULDER] = missing();
        let crop = BBox::new(0.0, 0.0, 50.0, 120.0);
        assert_eq!(filter_example(&joints, &crop, &cfg), Some(RejectReason::MissingUpperBody));
    }

    #[test]
    fn normalize_two_points() {
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[0] = joint(0.0, 0.0);
        joints[1] = joint(2.0, 0.0);
        let (kp, mask) = normalize_keypoints(&joints).unwrap();
        assert!((kp[0] - -1.0).abs() < 1e-12);
        assert!((kp[1]).abs() < 1e-12);
        assert!((kp[2] - 1.0).abs() < 1e-12);
        assert!(mask[0] && mask[1] && !mask[2]);
        // Missing joints are emitted as zeros.
        assert_eq!(kp[4], 0.0);
    }

    #[test]
    fn normalize_centers_any_input() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let joints: Vec<Joint> = (0..JOINT_COUNT)
                .map(|_| {
                    if rng.bernoulli(0.8) {
                        joint(rng.range(-100.0, 100.0), rng.range(-100.0, 100.0))
                    } else {
                        missing()
                    }
                })
                .collect();
            let visible = joints.iter().filter(|j| j.visible()).count();
            if visible < 2 {
                continue;
            }
            let (kp, mask) = normalize_keypoints(&joints).unwrap();
            let n = mask.iter().filter(|m| **m).count() as f64;
            let mx: f64 =
                (0..JOINT_COUNT).filter(|&i| mask[i]).map(|i| kp[2 * i]).sum::<f64>() / n;
            let my: f64 =
                (0..JOINT_COUNT).filter(|&i| mask[i]).map(|i| kp[2 * i + 1]).sum::<f64>() / n;
            assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_coincident_is_zero_scale() {
        let mut joints = vec![missing(); JOINT_COUNT];
        joints[0] = joint(3.0, 3.0);
        joints[1] = joint(3.0, 3.0);
        assert!(matches!(normalize_keypoints(&joints), Err(Error::ZeroScale)));
    }

    #[test]
    fn translation_and_scale_invariance() {
        let mut rng = Rng::new(17);
        for _ in 0..500 {
            let joints: Vec<Joint> = (0..JOINT_COUNT)
                .map(|_| joint(rng.range(-50.0, 50.0), rng.range(-50.0, 50.0)))
                .collect();
            let (base, _) = match normalize_keypoints(&joints) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let tx = rng.range(-500.0, 500.0);
            let ty = rng.range(-500.0, 500.0);
            let c = rng.range(0.1, 20.0);
            let moved: Vec<Joint> = joints
                .iter()
                .map(|j| Joint { x: c * (j.x + tx), y: c * (j.y + ty), confidence: j.confidence })
                .collect();
            let (transformed, _) = normalize_keypoints(&moved).unwrap();
            for (a, b) in base.iter().zip(&transformed) {
                assert!((a - b).abs() < 1e-9, "invariance violated: {a} vs {b}");
            }
        }
    }

    #[test]
    fn pad_geometry_examples() {
        let g = pad_crop_geometry(&BBox::new(0.0, 0.0, 128.0, 64.0), 256).unwrap();
        assert_eq!(g.scale, 2.0);
        assert_eq!(g.pad_y, (32.0, 32.0));
        assert_eq!(g.pad_x, (0.0, 0.0));

        let ident = pad_crop_geometry(&BBox::new(0.0, 0.0, 256.0, 256.0), 256).unwrap();
        assert_eq!(ident.scale, 1.0);
        assert_eq!(ident.pad_x, (0.0, 0.0));

        let down = pad_crop_geometry(&BBox::new(0.0, 0.0, 512.0, 512.0), 256).unwrap();
        assert_eq!(down.scale, 0.5);

        assert!(pad_crop_geometry(&BBox::new(0.0, 0.0, 0.0, 10.0), 256).is_err());
    }

    fn assigned(image: &str, subject: &str, bbox: BBox) -> AssignedDetection {
        AssignedDetection {
            image_id: image.into(),
            detection: 0,
            subject: subject.into(),
            q: 0.0,
            bbox,
            descriptor: vec![0.1, 0.2],
            image_size: (640, 640),
        }
    }

    fn test_store() -> SubjectStore {
        SubjectStore::from_subjects(vec![
            Subject {
                id: "a".into(),
                height_cm: 180.0,
                gender: Gender::Male,
                descriptor: vec![0.1, 0.2],
            },
            Subject {
                id: "b".into(),
                height_cm: 165.0,
                gender: Gender::Female,
                descriptor: vec![0.3, 0.4],
            },
            Subject {
                id: "c".into(),
                height_cm: 170.0,
                gender: Gender::Unknown,
                descriptor: vec![0.5, 0.6],
            },
        ])
        .unwrap()
    }

    #[test]
    fn build_examples_toy_fixture() {
        let cfg = PreprocessConfig::default();
        let store = test_store();
        // Image 1: clean, tall skeleton. Image 2: tiny skeleton (crop < 32).
        // Image 3: missing shoulder.
        let mut small = skeleton(300.0, 300.0, 20.0);
        for j in &mut small {
            j.x = 300.0 + (j.x - 300.0) * 0.12;
            j.y = 300.0 + (j.y - 300.0) * 0.12;
        }
        let mut no_shoulder = skeleton(100.0, 100.0, 200.0);
        no_shoulder[L_SHOULDER] = missing();
        let poses = vec![
            PoseRecord { image_id: "img1".into(), persons: vec![skeleton(100.0, 100.0, 300.0)] },
            PoseRecord { image_id: "img2".into(), persons: vec![small] },
            PoseRecord { image_id: "img3".into(), persons: vec![no_shoulder] },
        ];
        let assignments = vec![
            assigned("img1", "a", BBox::new(90.0, 90.0, 20.0, 20.0)),
            assigned("img2", "b", BBox::new(295.0, 295.0, 8.0, 8.0)),
            assigned("img3", "c", BBox::new(90.0, 90.0, 20.0, 20.0)),
        ];
        let (examples, log) = build_examples(&assignments, &poses, &store, &cfg).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].subject_id, "a");
        assert_eq!(examples[0].height_cm, 180.0);
        assert_eq!(log.total(), 2);
        assert_eq!(log.count(RejectReason::CropTooSmall), 1);
        assert_eq!(log.count(RejectReason::MissingUpperBody), 1);
        lint_examples(&examples, &cfg).unwrap();
    }

    #[test]
    fn build_examples_empty_and_duplicates() {
        let cfg = PreprocessConfig::default();
        let store = test_store();
        let (examples, log) = build_examples(&[], &[], &store, &cfg).unwrap();
        assert!(examples.is_empty());
        assert_eq!(log.total(), 0);

        let poses =
            vec![PoseRecord { image_id: "img1".into(), persons: vec![skeleton(100.0, 100.0, 300.0)] }];
        let dup = vec![
            assigned("img1", "a", BBox::new(90.0, 90.0, 20.0, 20.0)),
            assigned("img1", "a", BBox::new(90.0, 90.0, 20.0, 20.0)),
        ];
        assert!(matches!(
            build_examples(&dup, &poses, &store, &cfg),
            Err(Error::DuplicateExample { .. })
        ));
    }

    #[test]
    fn build_examples_missing_pose_is_logged() {
        let cfg = PreprocessConfig::default();
        let store = test_store();
        let assignments = vec![assigned("nope", "a", BBox::new(0.0, 0.0, 10.0, 10.0))];
        let (examples, log) = build_examples(&assignments, &[], &store, &cfg).unwrap();
        assert!(examples.is_empty());
        assert_eq!(log.count(RejectReason::MissingPose), 1);
    }

    #[test]
    fn rejection_logs_merge_by_sum() {
        let mut a = RejectionLog::default();
        a.add(RejectReason::CropTooSmall);
        let mut b = RejectionLog::default();
        b.add(RejectReason::CropTooSmall);
        b.add(RejectReason::MissingPose);
        a.merge(&b);
        assert_eq!(a.count(RejectReason::CropTooSmall), 2);
        assert_eq!(a.total(), 3);
    }
}
