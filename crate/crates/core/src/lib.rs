//! Two-step disentanglement of specified and unspecified factors.
//!
//! An S-encoder is first trained jointly with a classifier to predict the
//! labels. With S frozen, a Z-encoder and decoder are trained to reconstruct
//! the input while an adversary, trained in alternation, tries to recover the
//! labels from Z. The crate also ships the data generators (synthetic
//! rectangle images, CAPM market panels), probes for judging the resulting
//! codes, and a Black-Scholes straddle backtest.

pub mod audit;
pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod nets;
pub mod options;
pub mod probes;
pub mod stats;
pub mod two_step;

pub use error::{Error, Result};
