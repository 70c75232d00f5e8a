//! Seeded parameter initialization and SGD with momentum.

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamSlice};
use crate::rng::Rng;

/// Declarative parameter layout: name plus shape per layer. Rank-1 slices
/// are biases (zero-initialized); higher ranks are weights (Glorot uniform).
#[derive(Debug, Clone, Default)]
pub struct LayoutBuilder {
    slices: Vec<ParamSlice>,
    total: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize]) -> &mut Self {
        let slice = ParamSlice { name: name.to_string(), offset: self.total, shape: shape.to_vec() };
        self.total += slice.len();
        self.slices.push(slice);
        self
    }

    pub fn build(self) -> Vec<ParamSlice> {
        self.slices
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        // Dense weight [in, out].
        2 => (shape[0], shape[1]),
        // Conv kernels [c_out, c_in, kh, kw]: receptive-field fan.
        4 => (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]),
        _ => (shape.iter().product(), shape.iter().product()),
    }
}

/// Draws weights uniformly in +-sqrt(6 / (fan_in + fan_out)) and zeros
/// biases, from a generator seeded with `seed`. Same seed, same buffer.
pub fn init_params(layout: Vec<ParamSlice>, seed: u64) -> ModelParams {
    let total: usize = layout.iter().map(|s| s.len()).sum();
    let mut values = vec![0.0; total];
    let mut rng = Rng::new(seed).derive("init");
    for slice in &layout {
        if slice.shape.len() == 1 {
            continue; // bias stays zero
        }
        let (fan_in, fan_out) = fans(&slice.shape);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[slice.offset..slice.offset + slice.len()] {
            *v = rng.range(-bound, bound);
        }
    }
    ModelParams { values, layout, seed }
}

/// v <- mu v + g; theta <- theta - lr v. Rejects non-finite gradients with
/// the step index that produced them.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
    steps: usize,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, n_params: usize) -> Self {
        SgdMomentum { lr, momentum, velocity: vec![0.0; n_params], steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[f64]) -> Result<()> {
        if grads.len() != params.values.len() {
            return Err(Error::ShapeError(format!(
                "gradient buffer {} vs parameter buffer {}",
                grads.len(),
                params.values.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::DivergenceFault {
                step: self.steps,
                context: format!("gradient index {bad}"),
            });
        }
        for ((v, g), theta) in
            self.velocity.iter_mut().zip(grads).zip(params.values.iter_mut())
        {
            *v = self.momentum * *v + g;
            *theta -= self.lr * *v;
        }
        self.steps += 1;
        Ok(())
    }
}
