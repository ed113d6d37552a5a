//! Desk-scale laboratory for score-based black-box speaker-impersonation
//! attacks.
//!
//! The crate builds a fully synthetic analog of a speaker-verification
//! deployment: seeded feature extractors stand in for recognition networks,
//! bounded vectors stand in for audio, and a query-counting oracle is the only
//! channel an attacker may touch. On top of that world it implements the
//! attack toolbox — NES optimizers in audio and latent space, white-box
//! gradient descent, affine inverse models with identity/structure training
//! losses, and the non-adaptive subspace-projection attack — together with the
//! verification metrics (EER, minDCF, ASR) needed to evaluate them.
//!
//! Start with the runnable programs under `examples/`; each one exercises a
//! major capability end to end. The `svprobe` binary drives full experiments
//! from a JSON config.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod inverse;
pub mod metrics;
pub mod nes;
pub mod oracle;
pub mod seed;
pub mod subspace;
pub mod synthworld;

pub use error::{Error, Result};
