//! Simulation and analysis toolkit for optomechanically induced transparency
//! (OMIT) and amplification in a membrane-in-the-middle Fabry-Pérot cavity.
//!
//! The crate has three independent routes to the same observable — the beat
//! note between the transmitted pump and probe fields — and that redundancy
//! is the point:
//!
//! * [`response`] evaluates the analytic frequency-domain solution of the
//!   linearized dynamics: sideband amplitudes, beat spectra, group delay,
//!   transparency/amplification window metrics, and stability.
//! * [`oracle`] integrates the same classical equations of motion directly in
//!   the time domain and demodulates the result, cross-checking `response`
//!   with no shared algebra.
//! * [`fit`] estimates model parameters from measured (or synthetic) beat
//!   spectra by damped least squares, the way published window spectra are
//!   fitted.
//!
//! [`model`] holds the parameter bundle and derived quantities (coupling G,
//! cooperativity C, shifted mechanical frequency), and [`dispersion`]
//! computes the membrane-position dependence of the cavity resonance with a
//! transfer-matrix model, which is where G comes from physically.
//!
//! A narrative guide with runnable examples lives under [`guide`] and is also
//! rendered as an mdBook from the repository's `book/` directory.

// Validation guards use `!(x > 0.0)` so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constants;
pub mod dispersion;
mod error;
pub mod fit;
pub mod guide;
pub mod model;
pub mod oracle;
pub mod output;
pub mod response;

pub use error::{Error, Result};
pub use model::{
    quantum_storage_margin, steady_amplitude, CavityOptics, DerivedCoupling, DriveConfig,
    MechanicalMode, OmitSystem, ThermalEnvironment,
};
pub mod numerics;
