//! Desk-scale ensemble layer-to-layer distillation workbench.
//!
//! The crate trains a small transformer student to match the hidden
//! layers of several frozen transformer teachers over synthetic
//! waveforms, then scores each training mode with a linear probe on
//! paired clean / seen-noise / unseen-noise evaluation sets.
//!
//! Module map:
//! - [`tensor`]: dense `f64` tensors and a tape-based reverse-mode graph
//! - [`gradcheck`]: central-difference verification of the tape
//! - [`rng`]: deterministic seed derivation
//! - [`model`]: framing front-end, pre-norm encoders, prediction heads
//! - [`objectives`]: per-layer distillation loss and ensemble variants
//! - [`data`]: synthetic waveform corpus, distortions, splits, corpus IO
//! - [`trainer`]: Adam loop, teacher cache, checkpointing
//! - [`probe`]: layer-weighted linear probe and metrics reports
//! - [`experiment`]: config-driven runner and comparison tables

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod probe;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
