//! Numerical toolkit for spectrally localized kernels on the hyperbolic
//! plane, their microlocal lifts to `SL(2, R)`, and partially localized
//! quasimodes built from spectral windows.
//!
//! The crate is organised bottom-up:
//!
//! * [`group`] : matrices, Iwasawa coordinates, the horocycle bracket.
//! * [`transforms`] : the `h <-> g -> Q -> k` transform chain.
//! * [`kernel`] : the spectrally localized kernel and its bounds.
//! * [`ladder`] : weight spaces, raising/lowering operators, lift weights.
//! * [`microlocal`] : the lifted kernel and its phase-space localization.
//! * [`quasimode`] : extremal-point quasimodes and the mass report.

pub mod config;
pub mod error;
pub mod group;
pub mod interp;
pub mod kernel;
pub mod ladder;
pub mod microlocal;
pub mod quad;
pub mod quasimode;
pub mod transforms;

pub use error::{Error, Result};
pub use group::GroupElement;
pub use config::SpectralConfig;

/// Toolkit version embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
