//! Height predictors: linear ridge regression on precomputed feature
//! vectors, a 4-layer fully connected network on the same features, a
//! two-stream deep regressor that encodes face and body channels separately
//! and fuses them with two dense layers, and a gender classifier head that
//! predicts the gender-specific mean height.
//!
//! Networks regress the residual from the training mean (the mean is added
//! back at prediction time); inputs arrive as [`FeatureBundle`]s assembled
//! from annotated examples plus optional pixel crops.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_params, LayoutBuilder, SgdMomentum, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{AnnotatedExample, Gender, ModelParams};

/// Everything a model may consume for one example. At least one field must
/// be populated; pixel crops are optional side inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub keypoints_norm: Vec<f64>,
    pub visibility: Vec<bool>,
    pub face_features: Vec<f64>,
    /// Grayscale face crop [side * side], row-major.
    pub face_crop_pixels: Option<Vec<f64>>,
    /// Grayscale body crop [side * side], row-major.
    pub body_crop_pixels: Option<Vec<f64>>,
}

/// Pixel crops for one example, keyed like `AnnotatedExample::example_id`.
/// Stored as `crops.jsonl` next to the example stream when a generator or
/// an external rasterizer supplies pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub image_id: String,
    pub subject_id: String,
    pub face_side: usize,
    pub face: Vec<f64>,
    pub body_side: usize,
    pub body: Vec<f64>,
}

impl CropRecord {
    pub fn example_id(&self) -> String {
        format!("{}/{}", self.image_id, self.subject_id)
    }
}

/// One training or evaluation row.
#[derive(Debug, Clone)]
pub struct LabeledBundle {
    pub example_id: String,
    pub bundle: FeatureBundle,
    pub height_cm: f64,
    pub gender: Gender,
}

pub fn index_crops(crops: Vec<CropRecord>) -> BTreeMap<String, CropRecord> {
    crops.into_iter().map(|c| (c.example_id(), c)).collect()
}

/// Joins examples with optional pixel crops into model-ready rows.
pub fn rows_from_examples(
    examples: &[AnnotatedExample],
    crops: Option<&BTreeMap<String, CropRecord>>,
) -> Vec<LabeledBundle> {
    examples
        .iter()
        .map(|e| {
            let id = e.example_id();
            let crop = crops.and_then(|m| m.get(&id));
            LabeledBundle {
                example_id: id,
                bundle: FeatureBundle {
                    keypoints_norm: e.keypoints_norm.clone(),
                    visibility: e.visibility.clone(),
                    face_features: e.face_features.clone(),
                    face_crop_pixels: crop.map(|c| c.face.clone()),
                    body_crop_pixels: crop.map(|c| c.body.clone()),
                },
                height_cm: e.height_cm,
                gender: e.gender,
            }
        })
        .collect()
}

/// Which channels a vector model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSelect {
    Body,
    Face,
    Both,
}

impl FeatureSelect {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(FeatureSelect::Body),
            "face" => Ok(FeatureSelect::Face),
            "both" => Ok(FeatureSelect::Both),
            other => Err(Error::SpecError(format!("unknown feature set '{other}'"))),
        }
    }
}

/// Precomputed feature vector for Linear and the shallow network: body is
/// the whitened keypoints, face is the facial feature vector.
pub fn assemble_features(bundle: &FeatureBundle, select: FeatureSelect) -> Vec<f64> {
    match select {
        FeatureSelect::Body => bundle.keypoints_norm.clone(),
        FeatureSelect::Face => bundle.face_features.clone(),
        FeatureSelect::Both => {
            let mut v = bundle.keypoints_norm.clone();
            v.extend_from_slice(&bundle.face_features);
            v
        }
    }
}

/// Per-dimension standardization fitted on the train split; constant
/// dimensions keep scale 1 so they map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> FeatureStats {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for row in rows.clone() {
            if mean.is_empty() {
                mean = vec![0.0; row.len()];
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            n += 1;
        }
        for m in &mut mean {
            *m /= n.max(1) as f64;
        }
        let mut var = vec![0.0; mean.len()];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let std = (s / n.max(1) as f64).sqrt();
                if std < 1e-8 {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        FeatureStats { mean, scale }
    }

    pub fn apply(&self, values: &mut [f64]) {
        for ((v, m), s) in values.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Standardization for the two vector channels a network may read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetInputStats {
    pub keypoints: FeatureStats,
    pub face_features: FeatureStats,
}

impl NetInputStats {
    pub fn fit(rows: &[LabeledBundle]) -> NetInputStats {
        NetInputStats {
            keypoints: FeatureStats::fit(rows.iter().map(|r| r.bundle.keypoints_norm.as_slice())),
            face_features: FeatureStats::fit(rows.iter().map(|r| r.bundle.face_features.as_slice())),
        }
    }
}

// ---------------------------------------------------------------------------
// Linear regression via normal equations.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub select: FeatureSelect,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Solves the symmetric system `a x = b` in place by Gaussian elimination
/// with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 {
            return Err(Error::SingularSystem);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Minimizes ||X w + w0 - y||^2 + ridge ||w||^2 by the normal equations;
/// the intercept is not penalized. Returns (weights, intercept).
pub fn fit_linear(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    if rows.is_empty() || y.len() != rows.len() {
        return Err(Error::EmptyInput("linear regression rows"));
    }
    let d = rows[0].len();
    // Augmented system over [w, w0].
    let n = d + 1;
    let mut xtx = vec![vec![0.0; n]; n];
    let mut xty = vec![0.0; n];
    for (row, &target) in rows.iter().zip(y) {
        if row.len() != d {
            return Err(Error::ShapeError("ragged feature rows".into()));
        }
        for i in 0..d {
            for j in i..d {
                xtx[i][j] += row[i] * row[j];
            }
            xtx[i][d] += row[i];
            xty[i] += row[i] * target;
        }
        xtx[d][d] += 1.0;
        xty[d] += target;
    }
    for i in 0..d {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
        xtx[i][i] += ridge;
    }
    for j in 0..d {
        xtx[d][j] = xtx[j][d];
    }
    let solution = solve_dense(xtx, xty)?;
    let (weights, intercept) = solution.split_at(d);
    Ok((weights.to_vec(), intercept[0]))
}

impl LinearModel {
    pub fn fit(rows: &[LabeledBundle], select: FeatureSelect, ridge: f64) -> Result<Self> {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| assemble_features(&r.bundle, select)).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.height_cm).collect();
        let (weights, intercept) = fit_linear(&x, &y, ridge)?;
        Ok(LinearModel { select, weights, intercept })
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<f64> {
        let x = assemble_features(bundle, self.select);
        if x.len() != self.weights.len() {
            return Err(Error::ShapeError(format!(
                "linear model expects {} features, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}

// ---------------------------------------------------------------------------
// Network architectures.
// ---------------------------------------------------------------------------

/// Where a stream reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Keypoints,
    FaceFeatures,
    FacePixels,
    BodyPixels,
}

impl StreamSource {
    fn is_pixels(self) -> bool {
        matches!(self, StreamSource::FacePixels | StreamSource::BodyPixels)
    }

    fn missing_name(self) -> &'static str {
        match self {
            StreamSource::Keypoints => "keypoints_norm",
            StreamSource::FaceFeatures => "face_features",
            StreamSource::FacePixels => "face_crop_pixels",
            StreamSource::BodyPixels => "body_crop_pixels",
        }
    }
}

/// Per-stream encoder: a small MLP for vector inputs or a conv stack
/// (conv/relu/avgpool twice, then dense) for pixel inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StreamArch {
    Mlp { role: String, source: StreamSource, dims: Vec<usize> },
    Conv {
        role: String,
        source: StreamSource,
        side: usize,
        channels: (usize, usize),
        kernel: usize,
        embed: usize,
    },
}

impl StreamArch {
    pub fn role(&self) -> &str {
        match self {
            StreamArch::Mlp { role, .. } | StreamArch::Conv { role, .. } => role,
        }
    }

    fn source(&self) -> StreamSource {
        match self {
            StreamArch::Mlp { source, .. } | StreamArch::Conv { source, .. } => *source,
        }
    }

    fn embed_dim(&self) -> usize {
        match self {
            StreamArch::Mlp { dims, .. } => *dims.last().unwrap(),
            StreamArch::Conv { embed, .. } => *embed,
        }
    }

    /// Spatial side after conv(kernel)/pool(2) applied twice.
    fn conv_flat_dim(side: usize, channels: (usize, usize), kernel: usize) -> Result<usize> {
        let after = |s: usize| -> Result<usize> {
            if s < kernel {
                return Err(Error::SpecError(format!(
                    "conv stream: side {s} smaller than kernel {kernel}"
                )));
            }
            Ok((s - kernel + 1) / 2)
        };
        let s1 = after(side)?;
        let s2 = after(s1)?;
        if s2 == 0 {
            return Err(Error::SpecError(format!(
                "conv stream: side {side} collapses to zero after two stages"
            )));
        }
        Ok(channels.1 * s2 * s2)
    }

    fn declare(&self, layout: &mut LayoutBuilder) -> Result<()> {
        match self {
            StreamArch::Mlp { role, dims, .. } => {
                for i in 0..dims.len() - 1 {
                    layout.add(&format!("{role}.l{i}.w"), &[dims[i], dims[i + 1]]);
                    layout.add(&format!("{role}.l{i}.b"), &[dims[i + 1]]);
                }
            }
            StreamArch::Conv { role, side, channels, kernel, embed, .. } => {
                let flat = Self::conv_flat_dim(*side, *channels, *kernel)?;
                layout.add(&format!("{role}.conv1.k"), &[channels.0, 1, *kernel, *kernel]);
                layout.add(&format!("{role}.conv2.k"), &[channels.1, channels.0, *kernel, *kernel]);
                layout.add(&format!("{role}.fc.w"), &[flat, *embed]);
                layout.add(&format!("{role}.fc.b"), &[*embed]);
            }
        }
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, params: &BTreeMap<String, Var>, input: Var) -> Result<Var> {
        match self {
            StreamArch::Mlp { role, dims, .. } => {
                let mut h = input;
                for i in 0..dims.len() - 1 {
                    let w = params[&format!("{role}.l{i}.w")];
                    let b = params[&format!("{role}.l{i}.b")];
                    h = tape.dense(h, w, b)?;
                    if i + 1 < dims.len() - 1 {
                        h = tape.relu(h)?;
                    }
                }
                Ok(h)
            }
            StreamArch::Conv { role, .. } => {
                let mut h = tape.conv2d(input, params[&format!("{role}.conv1.k")], 1)?;
                h = tape.relu(h)?;
                h = tape.avgpool(h, 2)?;
                h = tape.conv2d(h, params[&format!("{role}.conv2.k")], 1)?;
                h = tape.relu(h)?;
                h = tape.avgpool(h, 2)?;
                h = tape.flatten(h)?;
                tape.dense(h, params[&format!("{role}.fc.w")], params[&format!("{role}.fc.b")])
            }
        }
    }
}

/// Serializable network description; the forward pass is rebuilt from this
/// plus the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NetArch {
    /// Fully connected chain on a precomputed feature vector; `dims` lists
    /// every layer width from input to output.
    Mlp { select: FeatureSelect, dims: Vec<usize> },
    /// One or two stream encoders fused by two dense layers.
    TwoStream { streams: Vec<StreamArch>, fusion_hidden: usize },
}

impl NetArch {
    pub fn dense_layer_count(&self) -> usize {
        match self {
            NetArch::Mlp { dims, .. } => dims.len() - 1,
            NetArch::TwoStream { .. } => 2,
        }
    }

    fn declare(&self) -> Result<Vec<crate::model::ParamSlice>> {
        let mut layout = LayoutBuilder::new();
        match self {
            NetArch::Mlp { dims, .. } => {
                for i in 0..dims.len() - 1 {
                    layout.add(&format!("l{i}.w"), &[dims[i], dims[i + 1]]);
                    layout.add(&format!("l{i}.b"), &[dims[i + 1]]);
                }
            }
            NetArch::TwoStream { streams, fusion_hidden } => {
                for s in streams {
                    s.declare(&mut layout)?;
                }
                let joint: usize = streams.iter().map(|s| s.embed_dim()).sum();
                layout.add("fuse1.w", &[joint, *fusion_hidden]);
                layout.add("fuse1.b", &[*fusion_hidden]);
                layout.add("out.w", &[*fusion_hidden, 1]);
                layout.add("out.b", &[1]);
            }
        }
        Ok(layout.build())
    }
}

/// A trained (or freshly initialized) network: architecture, flat
/// parameters, and the training-mean shift applied to targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetModel {
    pub arch: NetArch,
    pub params: ModelParams,
    pub target_mean: f64,
    /// Input standardization fitted on the train split; None until trained.
    pub input_stats: Option<NetInputStats>,
}

fn stream_input(
    tape: &mut Tape,
    rows: &[&FeatureBundle],
    source: StreamSource,
    arch: &StreamArch,
    stats: Option<&NetInputStats>,
) -> Result<Var> {
    let n = rows.len();
    match source {
        StreamSource::Keypoints => {
            let d = rows[0].keypoints_norm.len();
            let mut data = Vec::with_capacity(n * d);
            for r in rows {
                let start = data.len();
                data.extend_from_slice(&r.keypoints_norm);
                if let Some(s) = stats {
                    s.keypoints.apply(&mut data[start..]);
                }
            }
            tape.leaf(Tensor::new(vec![n, d], data)?)
        }
        StreamSource::FaceFeatures => {
            let d = rows[0].face_features.len();
            let mut data = Vec::with_capacity(n * d);
            for r in rows {
                let start = data.len();
                data.extend_from_slice(&r.face_features);
                if let Some(s) = stats {
                    s.face_features.apply(&mut data[start..]);
                }
            }
            tape.leaf(Tensor::new(vec![n, d], data)?)
        }
        StreamSource::FacePixels | StreamSource::BodyPixels => {
            let side = match arch {
                StreamArch::Conv { side, .. } => *side,
                StreamArch::Mlp { .. } => {
                    return Err(Error::SpecError("pixel input requires a conv stream".into()))
                }
            };
            let mut data = Vec::with_capacity(n * side * side);
            for r in rows {
                let px = match source {
                    StreamSource::FacePixels => r.face_crop_pixels.as_ref(),
                    _ => r.body_crop_pixels.as_ref(),
                };
                let px = px.ok_or(Error::StreamInputMissing(source.missing_name()))?;
                if px.len() != side * side {
                    return Err(Error::ShapeError(format!(
                        "crop has {} pixels, stream expects {side}x{side}",
                        px.len()
                    )));
                }
                // Center grayscale values: the conv stack has no bias terms.
                data.extend(px.iter().map(|v| v - 0.5));
            }
            tape.leaf(Tensor::new(vec![n, 1, side, side], data)?)
        }
    }
}

impl NetModel {
    pub fn new(arch: NetArch, seed: u64) -> Result<Self> {
        let layout = arch.declare()?;
        let params = init_params(layout, seed);
        params.validate()?;
        Ok(NetModel { arch, params, target_mean: 0.0, input_stats: None })
    }

    /// Channel features with the train-split standardization applied.
    fn normalized_features(&self, bundle: &FeatureBundle, select: FeatureSelect) -> Vec<f64> {
        let mut kp = bundle.keypoints_norm.clone();
        let mut face = bundle.face_features.clone();
        if let Some(stats) = &self.input_stats {
            stats.keypoints.apply(&mut kp);
            stats.face_features.apply(&mut face);
        }
        match select {
            FeatureSelect::Body => kp,
            FeatureSelect::Face => face,
            FeatureSelect::Both => {
                kp.extend_from_slice(&face);
                kp
            }
        }
    }

    fn param_leaves(&self, tape: &mut Tape) -> Result<(BTreeMap<String, Var>, Vec<Var>)> {
        let mut map = BTreeMap::new();
        let mut ordered = Vec::with_capacity(self.params.layout.len());
        for slice in &self.params.layout {
            let data =
                self.params.values[slice.offset..slice.offset + slice.len()].to_vec();
            let var = tape.leaf(Tensor::new(slice.shape.clone(), data)?)?;
            map.insert(slice.name.clone(), var);
            ordered.push(var);
        }
        Ok((map, ordered))
    }

    /// Network output (residual from `target_mean`) for a batch; also
    /// returns the parameter leaves in layout order for gradient gathering.
    fn forward(&self, tape: &mut Tape, rows: &[&FeatureBundle]) -> Result<(Var, Vec<Var>)> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (params, ordered) = self.param_leaves(tape)?;
        let out = match &self.arch {
            NetArch::Mlp { select, dims } => {
                let d = dims[0];
                let mut data = Vec::with_capacity(rows.len() * d);
                for r in rows {
                    let features = self.normalized_features(r, *select);
                    if features.len() != d {
                        return Err(Error::ShapeError(format!(
                            "model expects {d} features, got {}",
                            features.len()
                        )));
                    }
                    data.extend_from_slice(&features);
                }
                let mut h = tape.leaf(Tensor::new(vec![rows.len(), d], data)?)?;
                for i in 0..dims.len() - 1 {
                    let w = params[&format!("l{i}.w")];
                    let b = params[&format!("l{i}.b")];
                    h = tape.dense(h, w, b)?;
                    if i + 1 < dims.len() - 1 {
                        h = tape.relu(h)?;
                    }
                }
                h
            }
            NetArch::TwoStream { streams, .. } => {
                let mut embeds = Vec::with_capacity(streams.len());
                for s in streams {
                    let input = stream_input(tape, rows, s.source(), s, self.input_stats.as_ref())?;
                    embeds.push(s.forward(tape, &params, input)?);
                }
                let joint = match embeds.len() {
                    1 => embeds[0],
                    2 => tape.concat(embeds[0], embeds[1], 1)?,
                    n => return Err(Error::SpecError(format!("{n} streams unsupported"))),
                };
                let h = tape.dense(joint, params["fuse1.w"], params["fuse1.b"])?;
                let h = tape.relu(h)?;
                tape.dense(h, params["out.w"], params["out.b"])?
            }
        };
        Ok((out, ordered))
    }

    /// Raw network outputs plus the target mean, in row order.
    pub fn predict_batch(&self, rows: &[&FeatureBundle]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let mut tape = Tape::new();
            let (pred, _) = self.forward(&mut tape, chunk)?;
            out.extend(tape.value(pred).data().iter().map(|v| v + self.target_mean));
        }
        Ok(out)
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<f64> {
        Ok(self.predict_batch(&[bundle])?[0])
    }
}

// ---------------------------------------------------------------------------
// Builders.
// ---------------------------------------------------------------------------

/// Input dimensions measured from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataDims {
    pub keypoints: usize,
    pub face_features: usize,
    pub face_px_side: Option<usize>,
    pub body_px_side: Option<usize>,
}

impl DataDims {
    pub fn from_rows(rows: &[LabeledBundle]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("feature rows"))?;
        let side = |px: &Option<Vec<f64>>| -> Option<usize> {
            px.as_ref().map(|p| (p.len() as f64).sqrt().round() as usize)
        };
        Ok(DataDims {
            keypoints: first.bundle.keypoints_norm.len(),
            face_features: first.bundle.face_features.len(),
            face_px_side: side(&first.bundle.face_crop_pixels),
            body_px_side: side(&first.bundle.body_crop_pixels),
        })
    }

    fn vector_dim(&self, select: FeatureSelect) -> usize {
        match select {
            FeatureSelect::Body => self.keypoints,
            FeatureSelect::Face => self.face_features,
            FeatureSelect::Both => self.keypoints + self.face_features,
        }
    }
}

/// Configuration for the network builders. Defaults match the training
/// setup used throughout the evaluation harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorSpec {
    /// Hidden widths of the shallow net; must describe exactly 4 dense
    /// layers (3 hidden plus the output).
    pub shallow_hidden: Vec<usize>,
    /// Per-stream MLP hidden width and embedding dimension.
    pub stream_hidden: usize,
    pub stream_embed: usize,
    /// Fusion layer width (two fusion layers: hidden then output).
    pub fusion_hidden: usize,
    /// Conv stream channels and kernel for pixel inputs.
    pub conv_channels: (usize, usize),
    pub conv_kernel: usize,
    /// Stream input sources for the two-stream model.
    pub body_source: StreamSource,
    pub face_source: StreamSource,
    pub seed: u64,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            shallow_hidden: vec![256, 256, 256],
            stream_hidden: 64,
            stream_embed: 32,
            fusion_hidden: 64,
            conv_channels: (4, 8),
            conv_kernel: 3,
            body_source: StreamSource::Keypoints,
            face_source: StreamSource::FaceFeatures,
            seed: 0,
        }
    }
}

/// 4-layer fully connected regressor on the precomputed feature vector.
pub fn build_shallow(spec: &RegressorSpec, dims: &DataDims, select: FeatureSelect) -> Result<NetModel> {
    if spec.shallow_hidden.len() != 3 {
        return Err(Error::SpecError(format!(
            "shallow net must have exactly 4 dense layers (3 hidden), got {} hidden",
            spec.shallow_hidden.len()
        )));
    }
    let mut layer_dims = vec![dims.vector_dim(select)];
    layer_dims.extend_from_slice(&spec.shallow_hidden);
    layer_dims.push(1);
    NetModel::new(NetArch::Mlp { select, dims: layer_dims }, spec.seed)
}

fn make_stream(
    spec: &RegressorSpec,
    dims: &DataDims,
    role: &str,
    source: StreamSource,
) -> Result<StreamArch> {
    if source.is_pixels() {
        let side = match source {
            StreamSource::FacePixels => dims.face_px_side,
            _ => dims.body_px_side,
        }
        .ok_or(Error::StreamInputMissing(source.missing_name()))?;
        StreamArch::conv_flat_dim(side, spec.conv_channels, spec.conv_kernel)?;
        Ok(StreamArch::Conv {
            role: role.to_string(),
            source,
            side,
            channels: spec.conv_channels,
            kernel: spec.conv_kernel,
            embed: spec.stream_embed,
        })
    } else {
        let input = match source {
            StreamSource::Keypoints => dims.keypoints,
            _ => dims.face_features,
        };
        Ok(StreamArch::Mlp {
            role: role.to_string(),
            source,
            dims: vec![input, spec.stream_hidden, spec.stream_embed],
        })
    }
}

/// Two-stream deep regressor; `select` picks the full fused model or one of
/// the single-stream ablation variants.
pub fn build_deep_two_stream(
    spec: &RegressorSpec,
    dims: &DataDims,
    select: FeatureSelect,
) -> Result<NetModel> {
    let mut streams = Vec::new();
    if matches!(select, FeatureSelect::Body | FeatureSelect::Both) {
        streams.push(make_stream(spec, dims, "body", spec.body_source)?);
    }
    if matches!(select, FeatureSelect::Face | FeatureSelect::Both) {
        streams.push(make_stream(spec, dims, "face", spec.face_source)?);
    }
    NetModel::new(NetArch::TwoStream { streams, fusion_hidden: spec.fusion_hidden }, spec.seed)
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative per-epoch learning-rate decay.
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping: epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            lr_decay: 0.97,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

/// Per-epoch mean train loss and validation MAE; serialized into run
/// manifests and the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    pub best_epoch: usize,
}

fn mean_abs_error(preds: &[f64], labels: &[f64]) -> f64 {
    preds.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / preds.len() as f64
}

enum LossKind {
    /// MSE on height residuals.
    Height,
    /// BCE on binary labels carried in place of heights.
    Binary,
}

fn run_training(
    mut model: NetModel,
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    targets_train: &[f64],
    targets_val: &[f64],
    cfg: &TrainConfig,
    loss_kind: LossKind,
) -> Result<(NetModel, TrainHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training or validation split"));
    }
    if model.input_stats.is_none() {
        model.input_stats = Some(NetInputStats::fit(train));
    }
    let mut optimizer = SgdMomentum::new(cfg.lr, cfg.momentum, model.params.values.len());
    let mut rng = crate::rng::Rng::new(cfg.seed).derive("train-shuffle");
    let mut history = TrainHistory { train_loss: Vec::new(), val_mae: Vec::new(), best_epoch: 0 };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    let val_bundles: Vec<&FeatureBundle> = val.iter().map(|r| &r.bundle).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        optimizer.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<&FeatureBundle> = batch.iter().map(|&i| &train[i].bundle).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| targets_train[i]).collect();
            let mut tape = Tape::new();
            let (pred, param_vars) = model.forward(&mut tape, &rows)?;
            let target_var = tape.leaf(Tensor::column(&targets))?;
            let loss = match loss_kind {
                LossKind::Height => tape.mse_loss(pred, target_var)?,
                LossKind::Binary => tape.bce_loss(pred, target_var)?,
            };
            let loss_value = tape.value(loss).item();
            let grads = tape.backward(loss).map_err(|e| annotate_epoch(e, epoch))?;
            let mut flat = vec![0.0; model.params.values.len()];
            for (slice, var) in model.params.layout.iter().zip(&param_vars) {
                if let Some(g) = grads.get(*var) {
                    flat[slice.offset..slice.offset + slice.len()].copy_from_slice(g.data());
                }
            }
            optimizer.step(&mut model.params, &flat).map_err(|e| annotate_epoch(e, epoch))?;
            epoch_loss += loss_value * batch.len() as f64;
            seen += batch.len();
        }
        history.train_loss.push(epoch_loss / seen as f64);

        let val_metric = match loss_kind {
            LossKind::Height => {
                let preds = model.predict_batch(&val_bundles)?;
                let labels: Vec<f64> =
                    targets_val.iter().map(|t| t + model.target_mean).collect();
                mean_abs_error(&preds, &labels)
            }
            LossKind::Binary => {
                // Validation metric: classification error rate.
                let preds = model.predict_batch(&val_bundles)?;
                let wrong = preds
                    .iter()
                    .zip(targets_val)
                    .filter(|(logit, label)| (**logit >= 0.0) != (**label == 1.0))
                    .count();
                wrong as f64 / preds.len() as f64
            }
        };
        history.val_mae.push(val_metric);
        if val_metric < best_val {
            best_val = val_metric;
            best_params = model.params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, history))
}

fn annotate_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::DivergenceFault { step, context } => Error::DivergenceFault {
            step,
            context: format!("epoch {epoch}: {context}"),
        },
        other => other,
    }
}

/// Trains a height regressor with MSE on mean-shifted targets and early
/// stopping on validation MAE. Returns the model at its best epoch.
pub fn train_regressor(
    mut model: NetModel,
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    cfg: &TrainConfig,
) -> Result<(NetModel, TrainHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training or validation split"));
    }
    model.target_mean = train.iter().map(|r| r.height_cm).sum::<f64>() / train.len() as f64;
    let targets_train: Vec<f64> =
        train.iter().map(|r| r.height_cm - model.target_mean).collect();
    let targets_val: Vec<f64> = val.iter().map(|r| r.height_cm - model.target_mean).collect();
    run_training(model, train, val, &targets_train, &targets_val, cfg, LossKind::Height)
}

/// Predicts height for one bundle; fails when a required stream input is
/// absent.
pub fn predict_height(model: &NetModel, bundle: &FeatureBundle) -> Result<f64> {
    model.predict(bundle)
}

// ---------------------------------------------------------------------------
// Gender prediction head.
// ---------------------------------------------------------------------------

/// Two-stream classifier trained to predict gender, used as a baseline
/// height predictor by emitting the predicted gender's mean train height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderPredictor {
    pub net: NetModel,
    pub female_mean: f64,
    pub male_mean: f64,
}

fn gender_label(g: Gender) -> Option<f64> {
    match g {
        Gender::Female => Some(0.0),
        Gender::Male => Some(1.0),
        Gender::Unknown => None,
    }
}

/// Trains the gender classifier on rows with known gender (Unknown rows are
/// skipped; the count is returned). Gender means come from the train split
/// only.
pub fn train_gender_pred(
    model: NetModel,
    train: &[LabeledBundle],
    val: &[LabeledBundle],
    cfg: &TrainConfig,
) -> Result<(GenderPredictor, TrainHistory, usize)> {
    let keep = |rows: &[LabeledBundle]| -> Vec<LabeledBundle> {
        rows.iter().filter(|r| gender_label(r.gender).is_some()).cloned().collect()
    };
    let train_g = keep(train);
    let val_g = keep(val);
    let skipped = train.len() - train_g.len() + (val.len() - val_g.len());
    if train_g.is_empty() || val_g.is_empty() {
        return Err(Error::InsufficientLabels);
    }
    let mut female = Vec::new();
    let mut male = Vec::new();
    for r in &train_g {
        match r.gender {
            Gender::Female => female.push(r.height_cm),
            Gender::Male => male.push(r.height_cm),
            Gender::Unknown => {}
        }
    }
    if female.is_empty() || male.is_empty() {
        return Err(Error::InsufficientLabels);
    }
    let targets_train: Vec<f64> =
        train_g.iter().map(|r| gender_label(r.gender).unwrap()).collect();
    let targets_val: Vec<f64> = val_g.iter().map(|r| gender_label(r.gender).unwrap()).collect();
    let (net, history) =
        run_training(model, &train_g, &val_g, &targets_train, &targets_val, cfg, LossKind::Binary)?;
    Ok((
        GenderPredictor {
            net,
            female_mean: female.iter().sum::<f64>() / female.len() as f64,
            male_mean: male.iter().sum::<f64>() / male.len() as f64,
        },
        history,
        skipped,
    ))
}

impl GenderPredictor {
    /// Sigmoid threshold at 0.5: non-negative logit reads as male.
    pub fn predict_gender(&self, bundle: &FeatureBundle) -> Result<Gender> {
        let logit = self.net.predict(bundle)?;
        Ok(if logit >= 0.0 { Gender::Male } else { Gender::Female })
    }

    pub fn predict_height(&self, bundle: &FeatureBundle) -> Result<f64> {
        Ok(match self.predict_gender(bundle)? {
            Gender::Male => self.male_mean,
            _ => self.female_mean,
        })
    }
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

/// On-disk model file: layout table, parameter buffer, seed and the
/// configuration hash of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub model: CheckpointModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointModel {
    Linear(LinearModel),
    Net(NetModel),
    GenderPred(GenderPredictor),
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if let CheckpointModel::Net(net) = &ckpt.model {
            net.params.validate()?;
        }
        Ok(ckpt)
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<f64> {
        match &self.model {
            CheckpointModel::Linear(m) => m.predict(bundle),
            CheckpointModel::Net(m) => m.predict(bundle),
            CheckpointModel::GenderPred(m) => m.predict_height(bundle),
        }
    }
}
