//! Training and profiling stack for gesture recognition on 8×8 photon-
//! counting frames: tensor autodiff, integrate-and-fire spiking layers with
//! surrogate gradients, bicubic upscaling, Poisson spike encoding, Adam
//! training with early stopping, and FLOPs/spike-rate profiling.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*32`/`*64` aliases pick a concrete width.

pub mod data;
pub mod error;
pub mod fsutil;
pub mod imaging;
pub mod models;
pub mod profiling;
pub mod rng;
pub mod scalar;
pub mod serde_seed;
pub mod spiking;
pub mod tensor;
pub mod training;

pub use error::Error;
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Network32 = models::Network<f32>;
pub type Network64 = models::Network<f64>;
