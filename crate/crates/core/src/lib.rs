//! Spiking neural network engine for end-to-end fault diagnosis on raw
//! vibration signals.

pub mod autograd;
mod binio;
pub mod data;
pub mod energy;
pub mod error;
pub mod network;
pub mod neurons;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
