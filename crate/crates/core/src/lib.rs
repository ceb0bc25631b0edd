//! Core library for learning audio-effects representations from synthetic
//! multitrack mixtures and extracting instrument-wise effects embeddings
//! with a query-conditioned extractor.

pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fxnorm;
pub mod gradsuite;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
