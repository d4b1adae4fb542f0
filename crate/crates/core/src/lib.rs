//! Radio-to-PPG digital twin synthesis.
//!
//! The crate is organised along the processing chain:
//!
//! * [`ofdm`] simulates a 64-subcarrier OFDM link and estimates the channel
//!   frequency response (CFR) by least squares.
//! * [`physio`] synthesizes ground-truth physiology and the chest-modulated
//!   CFR stream that stands in for recorded data.
//! * [`preprocess`] conditions radio and PPG streams into aligned,
//!   z-scored training segments.
//! * [`spectral`] provides the unnormalized DCT-II pair used by the
//!   frequency-domain baseline.
//! * [`autodiff`] is a small reverse-mode tape with the layers, losses and
//!   optimizer both synthesis models need.
//! * [`models`] holds the DCT+MLP baseline, the U-NET approximation and
//!   MultiRes refinement cascade, and a residual vitals regressor.
//! * [`evalkit`] covers splits, reconstruction metrics, the channel-count
//!   ablation, SDPPG fiducials and embedding export.
//! * [`dataset`] defines the on-disk dataset format.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod models;
pub mod ofdm;
pub mod physio;
pub mod preprocess;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
