//! Noise-aware pulse optimisation for exchange-only spin qubits.
//!
//! A small tanh network maps normalised time and noise amplitude to a pair of
//! exchange pulses. Training first maximises the ensemble-averaged fidelity
//! and then shortens the pulse while the fidelity stays above threshold.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod gates;
pub mod noise;
pub mod net;
mod parallel;
pub mod train;
pub mod io;
pub mod plot;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
pub use model::{ExchangePair, PulseSchedule};
pub use noise::{EnsembleSpec, ExchangeNoise, NoiseMode, NoiseRealisation};
