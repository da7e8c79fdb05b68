//! Minimal reverse-mode autodiff with the layers the policies and the
//! reachability decoder need.

pub mod checkpoint;
pub mod dist;
mod graph;
mod layers;
mod optim;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, ParamId, ParamSet, Var};
pub use layers::{
    masked_mse, standard_normal, DecoderSpec, Dense, GridDecoder, LstmLayer, NetRole,
    RecurrentNet, RecurrentSpec, RecurrentState,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::{conv2d, conv_transpose2d, ConvGeometry, Tensor};

#[cfg(test)]
mod tests;
