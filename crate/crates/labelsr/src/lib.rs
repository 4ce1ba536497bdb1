//! Super-resolution of weak time-series labels for audio event detection.
//!
//! Long, coarsely labelled recordings are cheap to obtain; finely labelled
//! ones are not. This crate bootstraps an event detector from a small
//! finely labelled split plus a large weakly labelled split:
//!
//! 1. [`synthgen`] builds SNR-controlled synthetic datasets (a harmonic
//!    event mixed into non-stationary noise) with fine (0.1 s) and weak
//!    (5 s) label tracks.
//! 2. [`features`] turns audio into log-mel frames and ranks bands with a
//!    two-sample Kolmogorov-Smirnov statistic.
//! 3. [`kde`] fits class-conditional kernel density estimates and converts
//!    them into calibrated per-frame posteriors; [`baselines`] provides five
//!    conventional classifiers for comparison.
//! 4. [`postprocess`] median-filters the per-frame probabilities, rejects
//!    uncertain frames, and thresholds the rest into pseudo-fine labels.
//! 5. [`cnn`] trains a small convolutional network on the pseudo-labelled
//!    windows; [`pipeline`] orchestrates the whole cascade across an SNR
//!    sweep and scores every stage.
//!
//! The [`cli`] module backs the `labelsr` binary (`generate`,
//! `superresolve`, `reproduce`); the `examples/` directory demonstrates each
//! capability on its own.

pub mod audio;
pub mod baselines;
pub mod cli;
pub mod cnn;
pub mod error;
pub mod features;
pub mod kde;
pub mod pipeline;
pub mod postprocess;
pub mod seed;
pub mod synthgen;

pub use error::{Error, Result};
