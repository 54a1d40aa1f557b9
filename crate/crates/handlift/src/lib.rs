//! 3D hand pose lifting from 2D keypoint evidence.
//!
//! This crate implements the full pipeline for learning a 3D articulation
//! prior over hand poses at desk scale:
//!
//! * [`geometry`] — the canonical pose representation: scale/translation
//!   normalization, the canonical-frame rotation, handedness flip, axis-angle
//!   conversions, and the exact inverse.
//! * [`skeleton`] — a procedural 21-keypoint hand generator: forward
//!   kinematics, pose/camera sampling, pinhole projection, and dataset files.
//! * [`heatmap`] — per-keypoint score-map rendering/decoding plus the
//!   crop and noise augmentations used when assembling training inputs.
//! * [`nn`] — a minimal reverse-mode autodiff engine with exactly the layer
//!   set the architectures need, plus losses and the Adam optimizer.
//! * [`models`] — builders for the four network architectures and the
//!   two-stream pose prior predictor with recombination.
//! * [`training`] — loss assembly, learning-rate schedules and the training
//!   loops.
//! * [`evaluation`] — end-point error, PCK curves, AUC and the
//!   canonical-vs-direct ablation harness.
//! * [`format`] + [`cli`] — the on-disk formats (dataset records, configs,
//!   checkpoints) and the command-line entry points.
//!
//! Most capabilities have a runnable demo under `examples/`.

pub mod cli;
pub mod evaluation;
pub mod format;
pub mod geometry;
pub mod heatmap;
pub mod models;
pub mod nn;
pub mod rng;
pub mod runtime;
pub mod skeleton;
pub mod training;
