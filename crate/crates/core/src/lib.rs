//! Chromaticity-intensity decomposition for dual-camera coded-aperture
//! snapshot spectral imaging.
//!
//! A spectral cube `X` factors as `X = C ⊙ I`, where `I` is the per-pixel band
//! mean and `C` the illumination-invariant chromaticity. Given a coded
//! snapshot `y` and the intensity seen by an uncoded side camera, [`solver`]
//! recovers `C` by half-quadratic splitting with a closed-form data step.

pub mod attention;
pub mod cli;
pub mod cube;
pub mod decompose;
pub mod error;
pub mod io;
pub mod metrics;
pub mod prox;
pub mod sensing;
pub mod solver;

pub use cube::{GuidanceCube, IntensityMap, RgbImage, SpectralCube};
pub use error::{Error, Result};
pub use sensing::{Axis, CodedMask, Measurement, NoiseModel, SensingOperator};
