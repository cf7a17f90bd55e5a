//! Feature-space manipulation for style-based convolutional generators.
//!
//! The [`generator`] module provides a small deterministic generator whose
//! synthesis pass can capture and replace intermediate feature maps. On top
//! of that:
//!
//! * [`spatial`] pads and resizes feature maps,
//! * [`blend`] interpolates features between two renders, two generators, or
//!   shifted copies of one render,
//! * [`latent`] smooths latent sequences, fits a Gaussian over style
//!   coefficients and aligns pose,
//! * [`inversion`] recovers style coefficients for a target image,
//! * [`panorama`] knits constrained two-image spans into long panoramas,
//! * [`transfer`] composes the above into attribute transfer, single-image
//!   variations and freeze-finetuning.

pub mod blend;
pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod generator;
pub mod imageio;
pub mod inversion;
pub mod kernels;
pub mod latent;
pub mod optim;
pub mod panorama;
pub mod spatial;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use generator::{
    sample_latents, Generator, GeneratorConfig, HookSet, LatentCode, StyleCoeffs, StyleStack,
    StyleVector, Styles, Synthesis,
};
pub use tensor::{FeatureMap, Image, Tensor};
