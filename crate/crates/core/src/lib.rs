//! Joint recognition of sedentary activity and social context from
//! smartphone IMU windows.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small reverse-mode differentiation core with exactly the
//!   layer primitives the models need (1-D convolution, batch norm, dense,
//!   LSTM/GRU, multi-head attention, softmax, dropout) and Adam.
//! - [`dsp`]: IIR filter design, zero-phase filtering and the IMU
//!   conditioning chain (gravity removal, resampling, windowing,
//!   standardization).
//! - [`dataset`]: CSV ingestion, label codec, stratified k-fold planning,
//!   class weights, the binary window cache and a synthetic generator.
//! - [`model`]: the DySTAN network, its ablations and baselines, and
//!   checkpoint I/O.
//! - [`training`]: weighted joint loss, the per-fold loop and the
//!   cross-validation driver.
//! - [`metrics`]: classification and embedding-cluster metrics and fold
//!   reports.

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
