//! Link-level simulator for MIMO MC-CDMA systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`codes`]: m-sequences from Fibonacci LFSRs and Walsh–Hadamard code sets.
//! * [`waveform`]: symbol mapping, frequency-domain spreading, multicarrier
//!   modulation with a cyclic prefix, and despreading.
//! * [`channel`]: flat and tapped-delay MIMO Rayleigh channels with Kronecker
//!   spatial correlation, and additive white Gaussian noise.
//! * [`estimation`]: training design, LS and MMSE estimators, the analytic MMSE
//!   error, comb-pilot interpolation (linear and DFT-truncated).
//! * [`simulate`]: seeded Monte-Carlo trials and SNR sweeps.
//! * [`cli`]: config parsing, presets, CSV output and the command front-end.
//!
//! With the default `parallel` feature, sweeps fan trials out over rayon.
//! Without it every sweep runs on the calling thread. Results are identical
//! either way.

pub mod channel;
pub mod cli;
pub mod codes;
mod error;
pub mod estimation;
pub mod linalg;
pub mod selftest;
pub mod simulate;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;
