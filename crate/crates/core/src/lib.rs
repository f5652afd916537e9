//! Split Koopman autoencoder learning over a simulated wireless link.
//!
//! A sensor measures the state of a non-linear plant (an inverted cart-pole
//! by default), encodes it into a low-dimensional representation, and
//! transmits both the raw state and the representation over a noisy Rayleigh
//! fading channel. The remote observer trains the decoder together with a
//! linear latent-transition matrix, so that once training converges it can
//! predict future plant states locally, without any further transmissions.
//!
//! The crate is organised around that pipeline:
//!
//! - [`dynamics`] — the plant: cart-pole vector field, RK4 integration,
//!   trajectory generation.
//! - [`channel`] — the link: power scaling, block Rayleigh fading with path
//!   loss, AWGN, known-CSI equalization.
//! - [`neural`] — a minimal dense-network engine with exact reverse-mode
//!   gradients and Adam.
//! - [`koopman`] — the split autoencoder model, its three training losses,
//!   and the channel-coupled split training loop.
//! - [`monitor`] — the two-phase monitoring protocol and RMSE evaluation.
//! - [`checkpoint`] — versioned model serialization.

// `!(x > 0.0)` is used throughout config validation so NaN fails closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod checkpoint;
pub mod dynamics;
mod error;
pub mod koopman;
pub mod monitor;
pub mod neural;
pub mod seeding;

pub use error::{Error, Result};
