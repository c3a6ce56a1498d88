//! Differentially-private communication between cooperating agents.
//!
//! The crate is organised by concern:
//!
//! * [`accountant`]: Rényi-DP bookkeeping and the noise-calibration solver for
//!   a clipped, doubly-subsampled Gaussian message channel.
//! * [`mechanisms`]: local randomizers (randomized response, clipped Gaussian
//!   perturbation, subsampling) and the de-biasing receiver.
//! * [`binary_sums`]: the single-round "guess the sum of bits" game.
//! * [`cgp`]: two-player collaborative games with privacy: potential-game
//!   checks, best-response dynamics and Nash-equilibrium detection.
//! * [`multi_round`]: the multiple-round sums Markov potential game on
//!   discretized action grids.
//! * [`gaussian_sender`]: KL-optimal Gaussian message distributions with and
//!   without knowledge of the privacy noise.
//!
//! Every randomized operation is a pure function of its inputs and a `u64`
//! seed; see [`rng`] for the stream-derivation contract.

pub mod accountant;
pub mod binary_sums;
pub mod cgp;
pub mod error;
pub mod gaussian_sender;
pub mod mechanisms;
pub mod multi_round;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
