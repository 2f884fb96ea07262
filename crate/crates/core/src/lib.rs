//! Core library for MR-to-CT synthesis on procedural head phantoms.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense n-d tensors with reverse-mode autodiff, the ADAM
//!   optimizer, and a finite-difference gradient checker.
//! * [`nn`] — convolution, transposed convolution, batch normalization,
//!   activations, bilinear upsampling, and residual blocks.
//! * [`model`] — the translation networks (attention-guided GAN, plain GAN,
//!   and a CNN baseline), their losses, and the training loop.
//! * [`phantom`] — procedural paired MR/CT head phantoms, volume I/O,
//!   head-mask extraction, and intensity normalization.
//! * [`metrics`] — masked image-quality metrics (MAE / PSNR / SSIM),
//!   region decomposition, cross-validation folds, and report files.
//! * [`checkpoint`] — binary model snapshots with a JSON manifest.
//! * [`panels`] — PGM image panels for qualitative inspection.

pub mod checkpoint;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod panels;
pub mod phantom;
pub mod tensor;
