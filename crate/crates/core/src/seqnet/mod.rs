//! Minimal recurrent-network engine: stacked (Bi-)LSTM layers with an
//! affine output head, exact gradients by backpropagation through time,
//! Adam, and a central-difference gradient verifier.
//!
//! Everything runs in `f64` on a single thread so results are
//! bit-reproducible for a fixed seed.

mod adam;
mod batch;
mod gradcheck;
mod kernels;
mod lstm;
mod params;

pub use adam::{clip_global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use batch::SeqBatch;
pub use gradcheck::{check_gradient, finite_diff_check, GradCheckReport};
pub use lstm::{gradients, Tape};
pub use params::{Activation, Head, NetworkConfig, NetworkParams};
