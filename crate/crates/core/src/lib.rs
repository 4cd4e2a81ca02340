//! Monte Carlo simulator of asynchronous random access with time diversity:
//! every user sends `d` replicas of its packet at slot-quantised offsets
//! inside a private virtual frame; the receiver finds replica candidates by
//! sync-word correlation, pairs them by full-packet correlation, combines
//! them and runs successive interference cancellation over a sliding window.
//!
//! The signal kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! experiment layer and the aliases below fix `f64`.

pub mod detector;
pub mod error;
pub mod experiment;
pub mod matcher;
pub mod metrics;
pub mod params;
pub mod receiver;
pub mod scalar;
pub mod traffic;
pub mod waveform;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Real scalar used by the experiment layer.
pub type Real = f64;
/// Complex baseband sample.
pub type Sample = num_complex::Complex<Real>;
pub type Signal = waveform::SignalBuffer<Real>;
pub type Pulse = waveform::PulseTable<Real>;
