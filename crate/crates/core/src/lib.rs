//! Synthetic daily residential load-pattern generation.
//!
//! The pipeline turns hourly smart-meter readings into min-max normalized
//! 24-step daily profiles ([`ingest`]), trains a recurrent GAN that plays its
//! adversarial game in an over-complete hidden space ([`gan`], [`trainer`]),
//! picks the checkpoint whose generated data sits closest to the reference
//! data under the Fréchet distance between Gaussian summaries
//! ([`selection`]), and evaluates generated sets at sequence and aggregate
//! level ([`metrics`]).
//!
//! All recurrent networks are built on [`seqnet`], a small double-precision
//! Bi-LSTM engine with exact backpropagation through time.

pub mod error;
pub mod gan;
pub mod ingest;
pub mod metrics;
pub mod selection;
pub mod seqnet;
pub mod trainer;

pub use error::{Error, Result};

/// Number of hourly steps in a daily load profile.
pub const STEPS: usize = 24;
