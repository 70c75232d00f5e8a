//! Seeded synthetic data with known ground truth, standing in for web-mined
//! imagery at desk scale.
//!
//! The population generator plants height signal in scale-invariant places
//! only: limb proportions of a projected 18-joint skeleton and a facial
//! feature embedding. Every skeleton is drawn at a random pixel scale that
//! is independent of true height, so absolute size carries nothing. The
//! residual decomposition (body channel + face channel + unexplained +
//! label noise) is known, which makes the minimum achievable MAE of any
//! predictor computable in closed form.
//!
//! The identity generator builds multi-person images with noisy face
//! descriptors, bystanders and stale candidate labels for exercising the
//! label-propagation engine against an exact truth table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BBox, Detection, DetectionSet, Gender, Joint, PoseRecord, Subject, JOINT_COUNT,
    L_ANKLE, L_EAR, L_ELBOW, L_EYE, L_HIP, L_KNEE, L_SHOULDER, L_WRIST, NECK, NOSE, R_ANKLE,
    R_EAR, R_ELBOW, R_EYE, R_HIP, R_KNEE, R_SHOULDER, R_WRIST,
};
use crate::regressors::CropRecord;
use crate::rng::Rng;

/// How planted residuals depend on the latent factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalForm {
    /// Residual is linear in the latents (and hence, to first order, in the
    /// observed features): the regime where the normal equations are
    /// optimal.
    Linear,
    /// Residual mixes a linear part with zero-correlation quadratic terms,
    /// so a linear model can capture only part of each channel.
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n: usize,
    pub seed: u64,
    /// When false every subject is gender Unknown and heights center on the
    /// midpoint of the two gender means.
    pub gendered: bool,
    pub female_mean_cm: f64,
    pub female_std_cm: f64,
    pub male_mean_cm: f64,
    pub male_std_cm: f64,
    /// Standard deviation (cm) of the height residual expressed in body
    /// proportions, the facial channel, and nowhere (unexplained).
    /// body^2 + face^2 must not exceed the gender variance.
    pub body_signal_cm: f64,
    pub face_signal_cm: f64,
    pub signal_form: SignalForm,
    /// Label observation noise sigma (cm).
    pub obs_noise_cm: f64,
    /// Facial feature embedding: dimension, additive noise on the
    /// precomputed vector, and the gender marker strength inside it.
    pub d_feat: usize,
    pub face_embed_noise: f64,
    pub gender_marker: f64,
    /// Pixel crops: rendered when true; side length and pixel noise.
    pub render_crops: bool,
    pub crop_side: usize,
    pub pixel_noise: f64,
    /// Projection: skeleton pixel height drawn log-uniformly in this range,
    /// independent of true height; per-joint pixel jitter; chance that a
    /// non-essential joint is missing.
    pub min_body_px: f64,
    pub max_body_px: f64,
    pub joint_jitter_px: f64,
    pub missing_joint_rate: f64,
    /// Magnitude of height-uncorrelated pose variation (arm swing).
    pub pose_variation: f64,
    pub image_size: (u32, u32),
    /// Generated true heights are clipped to this range (cm).
    pub clip_cm: (f64, f64),
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n: 1000,
            seed: 0,
            gendered: true,
            female_mean_cm: 164.0,
            female_std_cm: 7.0,
            male_mean_cm: 177.0,
            male_std_cm: 7.0,
            body_signal_cm: 4.0,
            face_signal_cm: 4.0,
            signal_form: SignalForm::Nonlinear,
            obs_noise_cm: 1.0,
            d_feat: 16,
            face_embed_noise: 1.5,
            gender_marker: 1.0,
            render_crops: true,
            crop_side: 12,
            pixel_noise: 0.02,
            min_body_px: 80.0,
            max_body_px: 400.0,
            joint_jitter_px: 0.5,
            missing_joint_rate: 0.03,
            pose_variation: 0.02,
            image_size: (640, 640),
            clip_cm: (140.0, 210.0),
        }
    }
}

impl PopulationConfig {
    /// All residual variance expressed linearly in the features, label noise
    /// sigma = 5 cm, no embedding noise or jitter: the configuration whose
    /// error floor a correct linear fit must reach.
    pub fn linear_signal(n: usize, seed: u64) -> Self {
        PopulationConfig {
            n,
            seed,
            gendered: false,
            body_signal_cm: (49.0_f64 / 2.0).sqrt(),
            face_signal_cm: (49.0_f64 / 2.0).sqrt(),
            signal_form: SignalForm::Linear,
            obs_noise_cm: 5.0,
            face_embed_noise: 0.0,
            gender_marker: 0.0,
            render_crops: false,
            joint_jitter_px: 0.0,
            missing_joint_rate: 0.0,
            pose_variation: 0.0,
            ..Default::default()
        }
    }

    /// Gendered population with nonlinear signal split across the body and
    /// face channels; the precomputed face embedding is noisy while the
    /// rendered face crop carries the clean channel.
    pub fn nonlinear_split(n: usize, seed: u64) -> Self {
        PopulationConfig { n, seed, ..Default::default() }
    }

    /// No feature carries any height information; the gender means are the
    /// best any predictor can do.
    pub fn no_signal(n: usize, seed: u64) -> Self {
        PopulationConfig {
            n,
            seed,
            body_signal_cm: 0.0,
            face_signal_cm: 0.0,
            obs_noise_cm: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptyInput("population size"));
        }
        if self.female_std_cm <= 0.0 || self.male_std_cm <= 0.0 {
            return Err(Error::SpecError("gender stds must be positive".into()));
        }
        if self.obs_noise_cm < 0.0 {
            return Err(Error::SpecError("observation noise must be non-negative".into()));
        }
        if self.unexplained_var() < -1e-9 {
            return Err(Error::SpecError(
                "body and face signal exceed the population variance".into(),
            ));
        }
        if self.d_feat < 4 {
            return Err(Error::SpecError("d_feat must be at least 4".into()));
        }
        if self.min_body_px <= 0.0
            || self.max_body_px < self.min_body_px
            || self.max_body_px > 0.9 * self.image_size.1 as f64
        {
            return Err(Error::SpecError(format!(
                "body pixel range {}..{} does not fit a {} px tall image",
                self.min_body_px, self.max_body_px, self.image_size.1
            )));
        }
        Ok(())
    }

    fn gender_var(&self) -> f64 {
        // Residual variance within gender; both genders share it.
        self.female_std_cm * self.female_std_cm
    }

    fn unexplained_var(&self) -> f64 {
        self.gender_var()
            - self.body_signal_cm * self.body_signal_cm
            - self.face_signal_cm * self.face_signal_cm
    }
}

/// Minimum achievable test MAE given the observable features: the optimal
/// predictor recovers both planted channels and the gender, leaving the
/// unexplained residual plus label noise, whose absolute first moment is
/// sigma * sqrt(2 / pi).
pub fn bayes_floor(config: &PopulationConfig) -> f64 {
    let var = config.unexplained_var().max(0.0) + config.obs_noise_cm * config.obs_noise_cm;
    var.sqrt() * (2.0 / std::f64::consts::PI).sqrt()
}

/// Monte-Carlo estimate of the same floor, sampling the unexplained and
/// observation noise directly.
pub fn bayes_floor_mc(config: &PopulationConfig, samples: usize, seed: u64) -> f64 {
    let rest = config.unexplained_var().max(0.0).sqrt();
    let mut rng = Rng::new(seed).derive("bayes-floor-mc");
    let mut acc = 0.0;
    for _ in 0..samples {
        let e = rest * rng.normal() + config.obs_noise_cm * rng.normal();
        acc += e.abs();
    }
    acc / samples as f64
}

/// Per-person diagnostic truth: the noise-free height behind the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRecord {
    pub image_id: String,
    pub subject_id: String,
    pub height_true_cm: f64,
}

/// Everything the population generator emits, using the same record types
/// as the mining pipeline.
#[derive(Debug, Clone)]
pub struct PopulationData {
    pub subjects: Vec<Subject>,
    pub detection_sets: Vec<DetectionSet>,
    pub poses: Vec<PoseRecord>,
    pub crops: Vec<CropRecord>,
    pub truth: Vec<crate::assignment::TruthRecord>,
    pub ground: Vec<GroundRecord>,
}

/// Unit-variance channel function: fully linear, or a 0.6 linear plus 0.8
/// quadratic mix whose quadratic part carries no linear correlation.
fn channel_residual(u: &[f64; 2], form: SignalForm) -> f64 {
    match form {
        SignalForm::Linear => (u[0] + u[1]) / std::f64::consts::SQRT_2,
        SignalForm::Nonlinear => {
            0.6 * u[0] + 0.8 * (u[1] * u[1] - 1.0) / std::f64::consts::SQRT_2
        }
    }
}

/// Smooth fixed pattern fields for rendering face crops; row-major side^2.
fn pattern_field(rng: &mut Rng, side: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> =
        (0..3).map(|_| (rng.range(0.3, 1.2), rng.range(0.3, 1.2), rng.range(0.0, 6.28))).collect();
    let mut field = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut v = 0.0;
            for (ax, ay, phase) in &waves {
                v += (ax * x as f64 + ay * y as f64 + phase).sin();
            }
            field[y * side + x] = v;
        }
    }
    // Normalize to unit RMS so amplitudes are comparable across patterns.
    let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    for v in &mut field {
        *v /= rms;
    }
    field
}

struct FaceEmbedding {
    /// Unit-norm columns mapping [u0, u1, (u0^2-1)/sqrt2, (u1^2-1)/sqrt2]
    /// into feature space.
    columns: Vec<Vec<f64>>,
    gender_direction: Vec<f64>,
    patterns: Vec<Vec<f64>>,
    gender_pattern: Vec<f64>,
    base_pattern: Vec<f64>,
}

impl FaceEmbedding {
    fn build(config: &PopulationConfig, rng: &Rng) -> FaceEmbedding {
        let mut erng = rng.derive("face-embedding");
        let mut unit_vec = |d: usize| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|_| erng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        };
        let columns = (0..4).map(|_| unit_vec(config.d_feat)).collect();
        let gender_direction = unit_vec(config.d_feat);
        let mut prng = rng.derive("face-patterns");
        let patterns = (0..2).map(|_| pattern_field(&mut prng, config.crop_side)).collect();
        let gender_pattern = pattern_field(&mut prng, config.crop_side);
        let base_pattern = pattern_field(&mut prng, config.crop_side);
        FaceEmbedding { columns, gender_direction, patterns, gender_pattern, base_pattern }
    }

    /// Precomputed feature vector: linear plus quadratic embedding of the
    /// face latents, a gender marker, and embedding noise.
    fn features(
        &self,
        u: &[f64; 2],
        gender_sign: f64,
        config: &PopulationConfig,
        rng: &mut Rng,
    ) -> Vec<f64> {
        let basis = [
            u[0],
            u[1],
            (u[0] * u[0] - 1.0) / std::f64::consts::SQRT_2,
            (u[1] * u[1] - 1.0) / std::f64::consts::SQRT_2,
        ];
        let mut v = vec![0.0; config.d_feat];
        for (coeff, col) in basis.iter().zip(&self.columns) {
            for (slot, c) in v.iter_mut().zip(col) {
                *slot += coeff * c;
            }
        }
        for (slot, g) in v.iter_mut().zip(&self.gender_direction) {
            *slot += config.gender_marker * gender_sign * g;
        }
        for slot in v.iter_mut() {
            *slot += config.face_embed_noise * rng.normal();
        }
        v
    }

    /// Clean rendering of the face latents and gender marker as a grayscale
    /// crop; the pixel channel a deep stream can decode.
    fn render(
        &self,
        u: &[f64; 2],
        gender_sign: f64,
        config: &PopulationConfig,
        rng: &mut Rng,
    ) -> Vec<f64> {
        let side = config.crop_side;
        let mut px = vec![0.0; side * side];
        for i in 0..px.len() {
            let mut v = 0.5 + 0.1 * self.base_pattern[i];
            v += 0.2 * (u[0] * self.patterns[0][i] + u[1] * self.patterns[1][i]);
            v += 0.2 * config.gender_marker * gender_sign * self.gender_pattern[i];
            v += config.pixel_noise * rng.normal();
            px[i] = v.clamp(0.0, 1.0);
        }
        px
    }
}

/// Skeleton in body units (total height ~1, y growing downward). Limb
/// proportions carry the body latents: legs lengthen with u0, the head
/// grows with u1, so tibia-to-height and head-to-shoulder ratios encode
/// them scale-free.
fn skeleton_units(u: &[f64; 2], arm_swing: f64) -> [(f64, f64); JOINT_COUNT] {
    let leg_factor = 1.0 + 0.06 * u[0];
    let head_factor = 1.0 + 0.08 * u[1];
    let head = 0.12 * head_factor;
    let torso = 0.34;
    let leg = 0.54 * leg_factor;
    let shoulder_y = head + 0.04;
    let hip_y = head + torso;
    let mut joints = [(0.0, 0.0); JOINT_COUNT];
    joints[NOSE] = (0.0, 0.55 * head);
    joints[R_EYE] = (-0.15 * head, 0.35 * head);
    joints[L_EYE] = (0.15 * head, 0.35 * head);
    joints[R_EAR] = (-0.35 * head, 0.45 * head);
    joints[L_EAR] = (0.35 * head, 0.45 * head);
    joints[NECK] = (0.0, head);
    joints[R_SHOULDER] = (-0.11, shoulder_y);
    joints[L_SHOULDER] = (0.11, shoulder_y);
    joints[R_ELBOW] = (-0.13 - arm_swing, shoulder_y + 0.16);
    joints[L_ELBOW] = (0.13 + arm_swing, shoulder_y + 0.16);
    joints[R_WRIST] = (-0.14 - 1.5 * arm_swing, shoulder_y + 0.30);
    joints[L_WRIST] = (0.14 + 1.5 * arm_swing, shoulder_y + 0.30);
    joints[R_HIP] = (-0.065, hip_y);
    joints[L_HIP] = (0.065, hip_y);
    joints[R_KNEE] = (-0.07, hip_y + leg / 2.0 + 0.01);
    joints[L_KNEE] = (0.07, hip_y + leg / 2.0 + 0.01);
    joints[R_ANKLE] = (-0.075, hip_y + leg);
    joints[L_ANKLE] = (0.075, hip_y + leg);
    joints
}

/// Joints that may drop out without rejecting the example.
const OPTIONAL_JOINTS: [usize; 6] = [R_ELBOW, L_ELBOW, R_WRIST, L_WRIST, R_EAR, L_EAR];

/// Rasterizes skeleton bones into a grayscale crop.
fn render_body(joints: &[(f64, f64); JOINT_COUNT], side: usize, rng: &mut Rng, noise: f64) -> Vec<f64> {
    const BONES: [(usize, usize); 13] = [
        (NOSE, NECK),
        (NECK, R_SHOULDER),
        (NECK, L_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (L_SHOULDER, L_ELBOW),
        (R_ELBOW, R_WRIST),
        (L_ELBOW, L_WRIST),
        (NECK, R_HIP),
        (NECK, L_HIP),
        (R_HIP, R_KNEE),
        (L_HIP, L_KNEE),
        (R_KNEE, R_ANKLE),
        (L_KNEE, L_ANKLE),
    ];
    let xs: Vec<f64> = joints.iter().map(|j| j.0).collect();
    let ys: Vec<f64> = joints.iter().map(|j| j.1).collect();
    let (min_x, max_x) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
    let (min_y, max_y) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            (x - min_x) / span * (side as f64 - 1.0),
            (y - min_y) / span * (side as f64 - 1.0),
        )
    };
    let mut px = vec![0.0; side * side];
    for (a, b) in BONES {
        let (x0, y0) = to_px(joints[a].0, joints[a].1);
        let (x1, y1) = to_px(joints[b].0, joints[b].1);
        let steps = 2 * side;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 + t * (x1 - x0)).round() as isize;
            let y = (y0 + t * (y1 - y0)).round() as isize;
            if x >= 0 && y >= 0 && (x as usize) < side && (y as usize) < side {
                px[y as usize * side + x as usize] = 1.0;
            }
        }
    }
    for v in px.iter_mut() {
        *v = (*v + noise * rng.normal()).clamp(0.0, 1.0);
    }
    px
}

/// Generates the synthetic population: one subject and one single-person
/// image per person, emitted as the same record streams the mining pipeline
/// consumes (subjects, detection sets, poses), plus optional pixel crops,
/// an assignment truth table and noise-free ground heights.
pub fn generate_population(config: &PopulationConfig) -> Result<PopulationData> {
    config.validate()?;
    let root = Rng::new(config.seed).derive("population");
    let embedding = FaceEmbedding::build(config, &root);
    let rest_std = config.unexplained_var().max(0.0).sqrt();

    let mut data = PopulationData {
        subjects: Vec::with_capacity(config.n),
        detection_sets: Vec::with_capacity(config.n),
        poses: Vec::with_capacity(config.n),
        crops: Vec::new(),
        truth: Vec::with_capacity(config.n),
        ground: Vec::with_capacity(config.n),
    };

    for i in 0..config.n {
        let mut rng = root.derive_index(i as u64);
        let subject_id = format!("p{i:05}");
        let image_id = format!("img{i:05}");

        let (gender, mean) = if config.gendered {
            if rng.bernoulli(0.5) {
                (Gender::Male, self_mean(config, Gender::Male))
            } else {
                (Gender::Female, self_mean(config, Gender::Female))
            }
        } else {
            (Gender::Unknown, (config.female_mean_cm + config.male_mean_cm) / 2.0)
        };
        let gender_sign = match gender {
            Gender::Male => 1.0,
            Gender::Female => -1.0,
            Gender::Unknown => 0.0,
        };

        let u_body = [rng.normal(), rng.normal()];
        let u_face = [rng.normal(), rng.normal()];
        let r_body = config.body_signal_cm * channel_residual(&u_body, config.signal_form);
        let r_face = config.face_signal_cm * channel_residual(&u_face, config.signal_form);
        let r_rest = rest_std * rng.normal();
        let height_true = (mean + r_body + r_face + r_rest).clamp(config.clip_cm.0, config.clip_cm.1);
        let label = height_true + config.obs_noise_cm * rng.normal();
        let label = label.clamp(crate::model::HEIGHT_MIN_CM, crate::model::HEIGHT_MAX_CM);

        let face_features = embedding.features(&u_face, gender_sign, config, &mut rng);

        // Project the skeleton at a scale independent of height.
        let arm_swing = config.pose_variation * rng.normal();
        let units = skeleton_units(&u_body, arm_swing);
        let total_units = units[R_ANKLE].1.max(units[L_ANKLE].1);
        let body_px =
            (config.min_body_px.ln() + rng.uniform() * (config.max_body_px / config.min_body_px).ln())
                .exp();
        let scale = body_px / total_units;
        let (img_w, img_h) = (config.image_size.0 as f64, config.image_size.1 as f64);
        let margin_x = 0.2 * img_w;
        let tx = rng.range(margin_x, img_w - margin_x);
        let ty = rng.range(0.05 * img_h, (img_h - body_px - 0.05 * img_h).max(0.06 * img_h));

        let mut joints = Vec::with_capacity(JOINT_COUNT);
        for (idx, (ux, uy)) in units.iter().enumerate() {
            let missing = config.missing_joint_rate > 0.0
                && OPTIONAL_JOINTS.contains(&idx)
                && rng.bernoulli(config.missing_joint_rate);
            if missing {
                joints.push(Joint { x: 0.0, y: 0.0, confidence: 0.0 });
            } else {
                joints.push(Joint {
                    x: tx + ux * scale + config.joint_jitter_px * rng.normal(),
                    y: ty + uy * scale + config.joint_jitter_px * rng.normal(),
                    confidence: rng.range(0.75, 1.0),
                });
            }
        }

        // Face box around the nose, sized with the head.
        let head_px = 0.12 * (1.0 + 0.08 * u_body[1]) * scale;
        let nose = joints[NOSE];
        let face_side = (1.1 * head_px).max(4.0);
        let face_bbox =
            BBox::new(nose.x - face_side / 2.0, nose.y - face_side / 2.0, face_side, face_side);

        data.subjects.push(Subject {
            id: subject_id.clone(),
            height_cm: label,
            gender,
            descriptor: face_features.clone(),
        });
        data.detection_sets.push(DetectionSet {
            image_id: image_id.clone(),
            detections: vec![Detection { bbox: face_bbox, descriptor: face_features }],
            candidate_subjects: vec![subject_id.clone()],
            image_size: config.image_size,
        });
        data.poses.push(PoseRecord { image_id: image_id.clone(), persons: vec![joints] });
        data.truth.push(crate::assignment::TruthRecord {
            image_id: image_id.clone(),
            detection: 0,
            subject: Some(subject_id.clone()),
        });
        data.ground.push(GroundRecord {
            image_id: image_id.clone(),
            subject_id: subject_id.clone(),
            height_true_cm: height_true,
        });
        if config.render_crops {
            let face = embedding.render(&u_face, gender_sign, config, &mut rng);
            let body = render_body(&units, config.crop_side, &mut rng, config.pixel_noise);
            data.crops.push(CropRecord {
                image_id,
                subject_id,
                face_side: config.crop_side,
                face,
                body_side: config.crop_side,
                body,
            });
        }
    }
    Ok(data)
}

fn self_mean(config: &PopulationConfig, gender: Gender) -> f64 {
    match gender {
        Gender::Male => config.male_mean_cm,
        Gender::Female => config.female_mean_cm,
        Gender::Unknown => (config.female_mean_cm + config.male_mean_cm) / 2.0,
    }
}

// ---------------------------------------------------------------------------
// Identity benchmark.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    pub n_subjects: usize,
    pub n_images: usize,
    pub d_face: usize,
    /// Persons per image, uniform in 1..=max_persons.
    pub max_persons: usize,
    /// Subjects fall into lookalike clusters: descriptor = cluster center
    /// plus `cluster_spread` of individual variation. Two same-cluster
    /// faces in one image are exactly the ambiguity the ratio test exists
    /// to reject.
    pub cluster_count: usize,
    pub cluster_spread: f64,
    /// Chance that each additional person in an image is drawn from the
    /// first person's cluster rather than uniformly.
    pub cluster_pull: f64,
    /// Per-dimension descriptor noise for well-shot faces.
    pub descriptor_noise: f64,
    /// Fraction of detections with multiplied noise (blurry or occluded).
    pub degraded_rate: f64,
    pub degraded_multiplier: f64,
    /// Chance a person in the image is an unlabeled bystander.
    pub distractor_rate: f64,
    /// Chance the candidate list names one additional absent subject.
    pub absent_candidate_rate: f64,
    pub seed: u64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            n_subjects: 300,
            n_images: 1000,
            d_face: 64,
            max_persons: 6,
            cluster_count: 30,
            cluster_spread: 0.42,
            cluster_pull: 0.6,
            descriptor_noise: 0.72,
            degraded_rate: 0.25,
            degraded_multiplier: 2.0,
            distractor_rate: 0.15,
            absent_candidate_rate: 0.05,
            seed: 0,
        }
    }
}

impl IdentityConfig {
    /// Frozen preset calibrated once so that tau = 0.9 lands at precision
    /// >= 0.98 with recall in the 0.6..0.8 band on 1000 images.
    pub fn imdb_like(seed: u64) -> Self {
        IdentityConfig { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct IdentityData {
    pub subjects: Vec<Subject>,
    pub detection_sets: Vec<DetectionSet>,
    pub truth: Vec<crate::assignment::TruthRecord>,
}

/// Builds the identity benchmark: subjects with profile descriptors and
/// multi-person images whose detections carry noisy versions of them.
/// Candidate lists name the labeled subjects present, sometimes plus an
/// absent one; bystanders are detected but never listed.
pub fn generate_identity_benchmark(config: &IdentityConfig) -> Result<IdentityData> {
    if config.n_subjects < config.max_persons + 1 || config.n_images == 0 {
        return Err(Error::SpecError("identity benchmark too small".into()));
    }
    let root = Rng::new(config.seed).derive("identity");
    let mut srng = root.derive("subjects");
    let centers: Vec<Vec<f64>> = (0..config.cluster_count.max(1))
        .map(|_| (0..config.d_face).map(|_| srng.normal()).collect())
        .collect();
    let mut subjects = Vec::with_capacity(config.n_subjects);
    let mut cluster_of = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let cluster = srng.below(centers.len());
        let descriptor: Vec<f64> = centers[cluster]
            .iter()
            .map(|c| c + config.cluster_spread * srng.normal())
            .collect();
        cluster_of.push(cluster);
        subjects.push(Subject {
            id: format!("s{i:04}"),
            height_cm: srng.range(150.0, 200.0),
            gender: if srng.bernoulli(0.5) { Gender::Male } else { Gender::Female },
            descriptor,
        });
    }
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    for (idx, &c) in cluster_of.iter().enumerate() {
        by_cluster[c].push(idx);
    }

    let mut detection_sets = Vec::with_capacity(config.n_images);
    let mut truth = Vec::new();
    for img in 0..config.n_images {
        let mut rng = root.derive_index(img as u64);
        let image_id = format!("b{img:05}");
        let n_persons = 1 + rng.below(config.max_persons);
        // First person uniform; the rest lean toward the same cluster.
        let mut chosen: Vec<usize> = vec![rng.below(config.n_subjects)];
        let anchor_cluster = cluster_of[chosen[0]];
        while chosen.len() < n_persons {
            let pool = &by_cluster[anchor_cluster];
            let pick = if rng.bernoulli(config.cluster_pull) && pool.len() > 1 {
                pool[rng.below(pool.len())]
            } else {
                rng.below(config.n_subjects)
            };
            if !chosen.contains(&pick) {
                chosen.push(pick);
            } else if chosen.len() + 1 >= config.n_subjects {
                break;
            } else {
                // Duplicate draw: fall back to a uniform unused subject.
                let fallback = rng.below(config.n_subjects);
                if !chosen.contains(&fallback) {
                    chosen.push(fallback);
                }
            }
        }

        let mut detections = Vec::with_capacity(n_persons);
        let mut candidates = Vec::new();
        for (slot, &subject_idx) in chosen.iter().enumerate() {
            let noise = if rng.bernoulli(config.degraded_rate) {
                config.descriptor_noise * config.degraded_multiplier
            } else {
                config.descriptor_noise
            };
            let is_distractor = rng.bernoulli(config.distractor_rate);
            let descriptor: Vec<f64> = if is_distractor {
                // Bystander: a fresh identity outside the subject store.
                (0..config.d_face).map(|_| rng.normal()).collect()
            } else {
                subjects[subject_idx]
                    .descriptor
                    .iter()
                    .map(|v| v + noise * rng.normal())
                    .collect()
            };
            let x = rng.range(0.0, 600.0);
            let y = rng.range(0.0, 400.0);
            detections.push(Detection { bbox: BBox::new(x, y, 32.0, 32.0), descriptor });
            if is_distractor {
                truth.push(crate::assignment::TruthRecord {
                    image_id: image_id.clone(),
                    detection: slot,
                    subject: None,
                });
            } else {
                candidates.push(subjects[subject_idx].id.clone());
                truth.push(crate::assignment::TruthRecord {
                    image_id: image_id.clone(),
                    detection: slot,
                    subject: Some(subjects[subject_idx].id.clone()),
                });
            }
        }
        if rng.bernoulli(config.absent_candidate_rate) {
            // A stale label: someone named on the image who is not in it.
            let absent = loop {
                let idx = rng.below(config.n_subjects);
                if !chosen.contains(&idx) {
                    break idx;
                }
            };
            candidates.push(subjects[absent].id.clone());
        }
        detection_sets.push(DetectionSet {
            image_id,
            detections,
            candidate_subjects: candidates,
            image_size: (640, 480),
        });
    }
    Ok(IdentityData { subjects, detection_sets, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{audit_assignments, flatten_assignment, propagate_labels};
    use crate::model::SubjectStore;
    use crate::preprocess::{build_examples, PreprocessConfig};

    #[test]
    fn bayes_floor_closed_form() {
        let config = PopulationConfig::linear_signal(10, 1);
        let floor = bayes_floor(&config);
        assert!((floor - 5.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((floor - 3.989).abs() < 0.001);

        let mut zero = PopulationConfig::linear_signal(10, 1);
        zero.obs_noise_cm = 0.0;
        assert_eq!(bayes_floor(&zero), 0.0);
    }

    #[test]
    fn bayes_floor_mc_matches_closed_form() {
        let config = PopulationConfig::nonlinear_split(10, 1);
        let analytic = bayes_floor(&config);
        let mc = bayes_floor_mc(&config, 200_000, 7);
        assert!(
            (mc - analytic).abs() / analytic < 0.02,
            "mc {mc} vs analytic {analytic}"
        );
    }

    #[test]
    fn population_is_reproducible() {
        let config = PopulationConfig::nonlinear_split(50, 11);
        let a = generate_population(&config).unwrap();
        let b = generate_population(&config).unwrap();
        assert_eq!(serde_json::to_vec(&a.subjects).unwrap(), serde_json::to_vec(&b.subjects).unwrap());
        assert_eq!(serde_json::to_vec(&a.poses).unwrap(), serde_json::to_vec(&b.poses).unwrap());
        assert_eq!(serde_json::to_vec(&a.crops).unwrap(), serde_json::to_vec(&b.crops).unwrap());
    }

    #[test]
    fn female_mean_approaches_configured_value() {
        let mut config = PopulationConfig::nonlinear_split(100_000, 3);
        config.render_crops = false;
        let data = generate_population(&config).unwrap();
        let females: Vec<f64> = data
            .ground
            .iter()
            .zip(&data.subjects)
            .filter(|(_, s)| s.gender == Gender::Female)
            .map(|(g, _)| g.height_true_cm)
            .collect();
        assert!(females.len() > 40_000);
        let mean = females.iter().sum::<f64>() / females.len() as f64;
        assert!((mean - 164.0).abs() < 0.5, "female mean {mean}");
    }

    #[test]
    fn pixel_size_independent_of_height() {
        let mut config = PopulationConfig::nonlinear_split(10_000, 5);
        config.render_crops = false;
        let data = generate_population(&config).unwrap();
        let mut sizes = Vec::new();
        let mut heights = Vec::new();
        for (pose, ground) in data.poses.iter().zip(&data.ground) {
            let ys: Vec<f64> =
                pose.persons[0].iter().filter(|j| j.visible()).map(|j| j.y).collect();
            let span = ys.iter().cloned().fold(f64::MIN, f64::max)
                - ys.iter().cloned().fold(f64::MAX, f64::min);
            sizes.push(span);
            heights.push(ground.height_true_cm);
        }
        let n = sizes.len() as f64;
        let ms = sizes.iter().sum::<f64>() / n;
        let mh = heights.iter().sum::<f64>() / n;
        let cov: f64 =
            sizes.iter().zip(&heights).map(|(s, h)| (s - ms) * (h - mh)).sum::<f64>() / n;
        let vs = sizes.iter().map(|s| (s - ms) * (s - ms)).sum::<f64>() / n;
        let vh = heights.iter().map(|h| (h - mh) * (h - mh)).sum::<f64>() / n;
        let rho = cov / (vs * vh).sqrt();
        assert!(rho.abs() < 0.02, "pixel size correlates with height: rho {rho}");
    }

    #[test]
    fn population_survives_preprocess() {
        let config = PopulationConfig::nonlinear_split(2_000, 9);
        let data = generate_population(&config).unwrap();
        let store = SubjectStore::from_subjects(data.subjects.clone()).unwrap();
        let mut assigned = Vec::new();
        for set in &data.detection_sets {
            let a = propagate_labels(set, &store, 0.9).unwrap();
            assigned.extend(flatten_assignment(&a, set));
        }
        assert_eq!(assigned.len(), 2_000);
        let cfg = PreprocessConfig::default();
        let (examples, log) = build_examples(&assigned, &data.poses, &store, &cfg).unwrap();
        let rejection_rate = log.total() as f64 / 2_000.0;
        assert!(rejection_rate < 0.01, "rejection rate {rejection_rate}");
        crate::preprocess::lint_examples(&examples, &cfg).unwrap();
    }

    #[test]
    fn no_signal_leaves_gender_mean_unbeatable() {
        use crate::baselines::fit_gender_mean;
        use crate::evaluation::{mae, nested_subsample_order};
        use crate::regressors::{rows_from_examples, FeatureSelect, LinearModel};

        let mut config = PopulationConfig::no_signal(4000, 13);
        config.render_crops = false;
        let data = generate_population(&config).unwrap();
        let store = SubjectStore::from_subjects(data.subjects.clone()).unwrap();
        let mut assigned = Vec::new();
        for set in &data.detection_sets {
            let a = propagate_labels(set, &store, 0.9).unwrap();
            assigned.extend(flatten_assignment(&a, set));
        }
        let (examples, _) =
            build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default()).unwrap();
        let rows = rows_from_examples(&examples, None);
        let order = nested_subsample_order(rows.len(), 1);
        let n_train = (0.8 * rows.len() as f64) as usize;
        let train: Vec<_> = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
        let test: Vec<_> = order[n_train..].iter().map(|&i| rows[i].clone()).collect();
        let labels: Vec<f64> = test.iter().map(|r| r.height_cm).collect();

        let gm = fit_gender_mean(&train.iter().map(|r| (r.height_cm, r.gender)).collect::<Vec<_>>())
            .unwrap();
        let gm_preds: Vec<f64> = test.iter().map(|r| gm.predict(r.gender)).collect();
        let gm_mae = mae(&gm_preds, &labels).unwrap();

        let linear = LinearModel::fit(&train, FeatureSelect::Both, 1e-6).unwrap();
        let preds: Vec<f64> =
            test.iter().map(|r| linear.predict(&r.bundle).unwrap()).collect();
        let lin_mae = mae(&preds, &labels).unwrap();
        // Nothing to learn: the regressor cannot do better than the gender
        // means, up to sampling noise.
        assert!(lin_mae >= gm_mae - 0.1, "linear {lin_mae} vs gender mean {gm_mae}");
    }

    #[test]
    fn body_only_model_blind_to_face_only_signal() {
        use crate::baselines::fit_gender_mean;
        use crate::evaluation::{mae, nested_subsample_order};
        use crate::regressors::{rows_from_examples, FeatureSelect, LinearModel};

        let mut config = PopulationConfig::nonlinear_split(4000, 19);
        config.body_signal_cm = 0.0;
        config.face_signal_cm = 5.0;
        config.signal_form = SignalForm::Linear;
        config.face_embed_noise = 0.0;
        config.render_crops = false;
        let data = generate_population(&config).unwrap();
        let store = SubjectStore::from_subjects(data.subjects.clone()).unwrap();
        let mut assigned = Vec::new();
        for set in &data.detection_sets {
            let a = propagate_labels(set, &store, 0.9).unwrap();
            assigned.extend(flatten_assignment(&a, set));
        }
        let (examples, _) =
            build_examples(&assigned, &data.poses, &store, &PreprocessConfig::default()).unwrap();
        let rows = rows_from_examples(&examples, None);
        let order = nested_subsample_order(rows.len(), 1);
        let n_train = (0.8 * rows.len() as f64) as usize;
        let train: Vec<_> = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
        let test: Vec<_> = order[n_train..].iter().map(|&i| rows[i].clone()).collect();
        let labels: Vec<f64> = test.iter().map(|r| r.height_cm).collect();

        let gm = fit_gender_mean(&train.iter().map(|r| (r.height_cm, r.gender)).collect::<Vec<_>>())
            .unwrap();
        let gm_preds: Vec<f64> = test.iter().map(|r| gm.predict(r.gender)).collect();
        let gm_mae = mae(&gm_preds, &labels).unwrap();

        let body_only = LinearModel::fit(&train, FeatureSelect::Body, 1e-6).unwrap();
        let preds: Vec<f64> =
            test.iter().map(|r| body_only.predict(&r.bundle).unwrap()).collect();
        let body_mae = mae(&preds, &labels).unwrap();
        assert!(body_mae >= gm_mae - 0.15, "body-only {body_mae} vs gender mean {gm_mae}");

        // The face channel, in contrast, is worth a clear margin.
        let face_only = LinearModel::fit(&train, FeatureSelect::Face, 1e-6).unwrap();
        let preds: Vec<f64> =
            test.iter().map(|r| face_only.predict(&r.bundle).unwrap()).collect();
        let face_mae = mae(&preds, &labels).unwrap();
        assert!(face_mae < gm_mae - 0.5, "face-only {face_mae} vs gender mean {gm_mae}");
    }

    #[test]
    fn identity_zero_noise_is_perfect() {
        let config = IdentityConfig {
            descriptor_noise: 0.0,
            degraded_rate: 0.0,
            distractor_rate: 0.0,
            absent_candidate_rate: 0.0,
            n_images: 200,
            seed: 2,
            ..Default::default()
        };
        let data = generate_identity_benchmark(&config).unwrap();
        let store = SubjectStore::from_subjects(data.subjects.clone()).unwrap();
        let mut assigned = Vec::new();
        for set in &data.detection_sets {
            let a = propagate_labels(set, &store, 0.9).unwrap();
            assigned.extend(flatten_assignment(&a, set));
        }
        let report = audit_assignments(&assigned, &data.truth);
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn truth_table_round_trips_through_audit() {
        let config = IdentityConfig { n_images: 100, seed: 4, ..Default::default() };
        let data = generate_identity_benchmark(&config).unwrap();
        // Assign every true pair directly from the truth table.
        let mut by_image = std::collections::BTreeMap::new();
        for set in &data.detection_sets {
            by_image.insert(set.image_id.clone(), set);
        }
        let assigned: Vec<crate::assignment::AssignedDetection> = data
            .truth
            .iter()
            .filter_map(|t| {
                t.subject.as_ref().map(|s| {
                    let set = by_image[&t.image_id];
                    crate::assignment::AssignedDetection {
                        image_id: t.image_id.clone(),
                        detection: t.detection,
                        subject: s.clone(),
                        q: 0.0,
                        bbox: set.detections[t.detection].bbox,
                        descriptor: vec![],
                        image_size: set.image_size,
                    }
                })
            })
            .collect();
        let report = audit_assignments(&assigned, &data.truth);
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.n_assigned, report.n_labels);
    }
}
