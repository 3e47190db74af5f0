//! Sound-source localization with a three-microphone array: event and
//! waveform simulation, GCC-PHAT delay estimation, TDOA multilateration,
//! learned azimuth correction and the statistics used to evaluate them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod geometry;
pub mod locate;
pub mod models;
pub mod report;
pub mod seeding;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
