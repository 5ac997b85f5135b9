//! Deterministic CPU kernels for the segmentation networks.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{BatchNorm2d, Concat, Conv2d, Layer, LayerKind, MaxPool3, Mode, Param, Relu, Sigmoid, Upsample};
pub use loss::{weighted_bce, ClassWeights};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Scalar, Tensor};
