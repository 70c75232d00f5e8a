//! Minimal reverse-mode differentiation engine: tensors, an eager operation
//! tape with the layers needed by the height regressors (dense, relu,
//! concat, valid-padding conv2d, average pooling, MSE and sigmoid
//! cross-entropy losses), seeded Glorot initialization and SGD with
//! momentum.

pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{init_params, LayoutBuilder, SgdMomentum};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
