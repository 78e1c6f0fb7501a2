//! A small dense CNN: tensors, layer kernels with hand-written backward
//! passes, the configurable 5-stage network, SGD with momentum and a binary
//! model format.

mod io;
pub mod layers;
mod network;
mod tensor;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::Padding;
pub use network::{ConvStage, Gradients, LayerShape, Mode, Network, NetworkSpec};
pub use tensor::{Real, Tensor4};
