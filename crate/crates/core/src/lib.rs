#![cfg_attr(not(feature = "std"), no_std)]
//! Rotating-view diffusion MRI super-resolution with a direction-conditioned
//! coordinate network: forward model, phantom, network, training, tensor
//! fitting and image metrics.

extern crate alloc;

mod error;
pub mod geometry;
pub mod inr;
pub mod metrics;
pub mod numerics;
pub mod phantom;
pub mod quant;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
