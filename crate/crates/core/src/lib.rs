//! Toolkit for measuring how much adversarial-example detection gains from
//! using hidden representations of many independently seeded classifiers
//! instead of one.
//!
//! The crate is organized around the experiment stages:
//!
//! - [`diffcore`] — a small dense/convolutional tensor engine with
//!   reverse-mode differentiation, enough to train the classifiers here and
//!   to compute input gradients for attacks.
//! - [`models`] — the classifier architecture, training loop, and
//!   penultimate-representation extraction.
//! - [`data`] — CIFAR-10 binary ingestion, a synthetic stand-in dataset, and
//!   pair-preserving train/test splitting.
//! - [`attacks`] — untargeted FGSM, BIM, and CW-L2 generation with
//!   clip-and-quantize post-processing and transfer statistics.
//! - [`detection`] — model-wise and unit-wise detector pipelines, each with
//!   a treatment (many representation models) and a control (one) arm.
//! - [`harness`] — experiment orchestration, persistence, summaries, and
//!   report emission (CSV, SVG charts, image grids).

pub mod attacks;
pub mod data;
pub mod detection;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod models;
pub mod seed;

pub use error::{Error, Result};
